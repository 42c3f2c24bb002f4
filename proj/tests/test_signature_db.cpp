#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "tracediag/signature_db.hpp"

using namespace tracediag;

namespace {

Signature make_sig(const std::string& id, const LabelSet& labels, uint64_t seed = 1) {
    Signature s;
    s.id = id;
    s.labels = labels;
    std::mt19937_64 rng(seed);
    s.x.resize(SIGNATURE_DIM);
    for (auto& v : s.x) v = double(rng() % 10000) / 7.0;
    s.meta.tcp_variant = "reno";
    s.meta.link = {80.0, 10.0, 0.0};
    s.meta.transfer_bytes = 200000;
    s.meta.seed = seed;
    return s;
}

} // namespace

TEST_CASE("class label parsing and ordering") {
    CHECK(ClassLabel::parse("cf_0") == ClassLabel::healthy());
    CHECK(ClassLabel::parse("healthy") == ClassLabel::healthy());
    CHECK(ClassLabel::parse("cf_3").index == 3);
    CHECK(ClassLabel::parse("cf_3").str() == "cf_3");
    CHECK_THROWS_AS(ClassLabel::parse("fault_3"), Error);
    CHECK(ClassLabel{1} < ClassLabel{2});
}

TEST_CASE("append grows the database monotonically") {
    SignatureDb db;
    append_signature(db, make_sig("s1", single_label(0)));
    CHECK(db.rows.size() == 1);
    append_signature(db, make_sig("s2", single_label(1), 2));
    CHECK(db.rows.size() == 2);
    CHECK(db.rows[0].id == "s1");
}

TEST_CASE("dimension mismatch is rejected") {
    SignatureDb db;
    auto sig = make_sig("bad", single_label(0));
    sig.x.resize(SIGNATURE_DIM - 1);
    CHECK_THROWS_AS(append_signature(db, sig), DimensionMismatch);
}

TEST_CASE("duplicate ids are rejected") {
    SignatureDb db;
    append_signature(db, make_sig("dup", single_label(0)));
    CHECK_THROWS_AS(append_signature(db, make_sig("dup", single_label(1))), DuplicateId);
}

TEST_CASE("healthy label cannot combine with faults") {
    SignatureDb db;
    auto sig = make_sig("mixed", LabelSet{ClassLabel{0}, ClassLabel{3}});
    CHECK_THROWS_AS(append_signature(db, sig), Error);
}

TEST_CASE("eleven signatures per class gives fifty-five rows") {
    SignatureDb db;
    uint64_t seed = 1;
    for (int cls = 0; cls <= 4; ++cls)
        for (int i = 0; i < 11; ++i)
            append_signature(db, make_sig("c" + std::to_string(cls) + "_" + std::to_string(i),
                                          single_label(cls), seed++));
    CHECK(db.rows.size() == 55);
}

TEST_CASE("training subset selection follows the exact-label rule") {
    SignatureDb db;
    uint64_t seed = 1;
    for (int i = 0; i < 11; ++i)
        append_signature(db, make_sig("h" + std::to_string(i), single_label(0), seed++));
    for (int i = 0; i < 11; ++i)
        append_signature(db, make_sig("f1_" + std::to_string(i), single_label(1), seed++));
    for (int i = 0; i < 11; ++i)
        append_signature(db, make_sig("f3_" + std::to_string(i), single_label(3), seed++));
    append_signature(db, make_sig("multi", LabelSet{ClassLabel{3}, ClassLabel{4}}, seed++));

    auto sub = select_training_subset(db, ClassLabel{1});
    CHECK(sub.x.size() == 22);
    CHECK(sub.healthy_count == 11);
    CHECK(sub.fault_count == 11);

    // the multi-fault row is absent from every training subset
    auto sub3 = select_training_subset(db, ClassLabel{3});
    CHECK(sub3.x.size() == 22);
    for (const auto& id : sub3.ids) CHECK(id != "multi");
    auto sub4_err = [&] { return select_training_subset(db, ClassLabel{4}); };
    CHECK_THROWS_AS(sub4_err(), InsufficientSamples); // only the multi row has cf_4

    CHECK_THROWS_AS(select_training_subset(db, ClassLabel{2}), InsufficientSamples);
    CHECK_THROWS_AS(select_training_subset(db, ClassLabel::healthy()), Error);
}

TEST_CASE("insufficient-samples message names the short side") {
    SignatureDb db;
    append_signature(db, make_sig("h0", single_label(0), 1));
    append_signature(db, make_sig("h1", single_label(0), 2));
    append_signature(db, make_sig("f0", single_label(2), 3));
    try {
        select_training_subset(db, ClassLabel{2});
        FAIL("expected InsufficientSamples");
    } catch (const InsufficientSamples& e) {
        CHECK(std::string(e.what()).find("cf_2") != std::string::npos);
    }
}

TEST_CASE("persistence round-trip") {
    SignatureDb db;
    append_signature(db, make_sig("a", single_label(0), 7));
    append_signature(db, make_sig("b", single_label(2), 8));
    append_signature(db, make_sig("c", LabelSet{ClassLabel{3}, ClassLabel{4}}, 9));
    db.rows[0].x[5] = 0.1 + 0.2; // value without a short decimal form
    db.rows[1].meta.link.loss_pct = 7.3;

    auto text = save_db(db);
    auto back = load_db(text);
    REQUIRE(back.rows.size() == db.rows.size());
    CHECK(back.m == db.m);
    CHECK(back.feature_names == db.feature_names);
    for (std::size_t i = 0; i < db.rows.size(); ++i) {
        CHECK(back.rows[i].id == db.rows[i].id);
        CHECK(back.rows[i].labels == db.rows[i].labels);
        CHECK(back.rows[i].x == db.rows[i].x); // exact, full-precision decimals
        CHECK(back.rows[i].meta.tcp_variant == db.rows[i].meta.tcp_variant);
        CHECK(back.rows[i].meta.link.loss_pct == db.rows[i].meta.link.loss_pct);
        CHECK(back.rows[i].meta.seed == db.rows[i].meta.seed);
    }
    // writing again is byte-identical
    CHECK(save_db(back) == text);
}

TEST_CASE("catalog version mismatch is rejected on load") {
    SignatureDb db;
    auto sig = make_sig("v", single_label(1));
    sig.catalog_version = 2;
    CHECK_THROWS_AS(append_signature(db, sig), CatalogMismatch);
}

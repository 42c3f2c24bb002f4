#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tracediag/errors.hpp"
#include "tracediag/features.hpp"

namespace tracediag {

// Fault class label: cf_0 is reserved for healthy, cf_1.. are fault classes.
struct ClassLabel {
    int index = 0;

    static ClassLabel healthy() { return {0}; }
    bool is_healthy() const { return index == 0; }
    std::string str() const { return "cf_" + std::to_string(index); }

    static ClassLabel parse(const std::string& s) {
        if (s == "healthy") return healthy();
        if (s.rfind("cf_", 0) == 0) {
            const int j = std::stoi(s.substr(3));
            if (j >= 0) return {j};
        }
        throw Error("unrecognized class label: " + s);
    }

    auto operator<=>(const ClassLabel&) const = default;
};

using LabelSet = std::set<ClassLabel>;

inline LabelSet single_label(int j) { return LabelSet{ClassLabel{j}}; }

struct LinkMeta {
    double rate_Mbps = 0;
    double delay_ms = 0;
    double loss_pct = 0;
};

struct SampleMeta {
    std::string tcp_variant;
    LinkMeta link;
    uint64_t transfer_bytes = 0;
    uint64_t seed = 0;
};

// One row of the signature database: the combined dual-vantage feature vector
// with its ground-truth label set and capture metadata.
struct Signature {
    std::string id;
    std::vector<double> x;
    LabelSet labels;
    SampleMeta meta;
    int catalog_version = CATALOG_VERSION;
};

struct SignatureDb {
    int catalog_version = CATALOG_VERSION;
    std::size_t m = SIGNATURE_DIM;
    std::vector<std::string> feature_names = signature_feature_names();
    std::vector<Signature> rows;
};

// Rows drawn for one fault's training run: exact-{cf_0} and exact-{cf_j}
// rows in database order; multi-label rows are never included.
struct TrainingSubset {
    std::vector<std::vector<double>> x;
    std::vector<LabelSet> labels;
    std::vector<std::string> ids;
    std::size_t healthy_count = 0;
    std::size_t fault_count = 0;
};

inline void append_signature(SignatureDb& db, Signature sig) {
    if (sig.catalog_version != db.catalog_version)
        throw CatalogMismatch("signature catalog_version " + std::to_string(sig.catalog_version) +
                              " vs database " + std::to_string(db.catalog_version));
    if (sig.x.size() != db.m)
        throw DimensionMismatch("signature has " + std::to_string(sig.x.size()) +
                                " features, database expects " + std::to_string(db.m));
    if (sig.labels.empty()) throw Error("signature must carry at least one label");
    if (sig.labels.size() > 1 && sig.labels.count(ClassLabel::healthy()))
        throw Error("cf_0 cannot be combined with fault labels");
    for (double v : sig.x)
        if (!std::isfinite(v)) throw Error("signature vector contains a non-finite value");
    for (const auto& row : db.rows)
        if (row.id == sig.id) throw DuplicateId("duplicate signature id: " + sig.id);
    db.rows.push_back(std::move(sig));
}

inline TrainingSubset select_training_subset(const SignatureDb& db, ClassLabel fault) {
    if (fault.is_healthy()) throw Error("cannot train a classifier for cf_0");
    TrainingSubset sub;
    const LabelSet healthy_set = {ClassLabel::healthy()};
    const LabelSet fault_set = {fault};
    for (const auto& row : db.rows) {
        if (row.labels == healthy_set) {
            sub.x.push_back(row.x);
            sub.labels.push_back(row.labels);
            sub.ids.push_back(row.id);
            ++sub.healthy_count;
        } else if (row.labels == fault_set) {
            sub.x.push_back(row.x);
            sub.labels.push_back(row.labels);
            sub.ids.push_back(row.id);
            ++sub.fault_count;
        }
    }
    if (sub.healthy_count < 2 || sub.fault_count < 2) {
        std::string msg = "insufficient training rows for " + fault.str() + ":";
        if (sub.healthy_count < 2)
            msg += " healthy has " + std::to_string(sub.healthy_count) + " (need 2)";
        if (sub.fault_count < 2)
            msg += " " + fault.str() + " has " + std::to_string(sub.fault_count) + " (need 2)";
        throw InsufficientSamples(msg);
    }
    return sub;
}

// --- JSON Lines persistence -------------------------------------------------

namespace detail {

inline nlohmann::json labels_to_json(const LabelSet& labels) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& l : labels) arr.push_back(l.str());
    return arr;
}

inline LabelSet labels_from_json(const nlohmann::json& arr) {
    LabelSet out;
    for (const auto& v : arr) out.insert(ClassLabel::parse(v.get<std::string>()));
    return out;
}

inline nlohmann::json meta_to_json(const SampleMeta& m) {
    return {{"tcp_variant", m.tcp_variant},
            {"link",
             {{"rate_Mbps", m.link.rate_Mbps},
              {"delay_ms", m.link.delay_ms},
              {"loss_pct", m.link.loss_pct}}},
            {"transfer_bytes", m.transfer_bytes},
            {"seed", m.seed}};
}

inline SampleMeta meta_from_json(const nlohmann::json& j) {
    SampleMeta m;
    m.tcp_variant = j.value("tcp_variant", "");
    if (j.contains("link")) {
        m.link.rate_Mbps = j["link"].value("rate_Mbps", 0.0);
        m.link.delay_ms = j["link"].value("delay_ms", 0.0);
        m.link.loss_pct = j["link"].value("loss_pct", 0.0);
    }
    m.transfer_bytes = j.value("transfer_bytes", uint64_t(0));
    m.seed = j.value("seed", uint64_t(0));
    return m;
}

} // namespace detail

// Header line followed by one self-describing record per row. Doubles are
// emitted shortest-round-trip, so load(save(db)) == db exactly.
inline std::string save_db(const SignatureDb& db) {
    std::ostringstream out;
    nlohmann::json header = {{"catalog_version", db.catalog_version},
                             {"m", db.m},
                             {"features", db.feature_names}};
    out << header.dump() << "\n";
    for (const auto& row : db.rows) {
        nlohmann::json line = {{"id", row.id},
                               {"labels", detail::labels_to_json(row.labels)},
                               {"meta", detail::meta_to_json(row.meta)},
                               {"x", row.x}};
        out << line.dump() << "\n";
    }
    return out.str();
}

inline SignatureDb load_db(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw Error("signature db: missing header line");
    nlohmann::json header = nlohmann::json::parse(line);
    SignatureDb db;
    db.catalog_version = header.at("catalog_version").get<int>();
    db.m = header.at("m").get<std::size_t>();
    db.feature_names = header.at("features").get<std::vector<std::string>>();
    if (db.feature_names.size() != db.m)
        throw Error("signature db: header feature list does not match m");
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        Signature sig;
        sig.id = j.at("id").get<std::string>();
        sig.labels = detail::labels_from_json(j.at("labels"));
        sig.meta = detail::meta_from_json(j.at("meta"));
        sig.x = j.at("x").get<std::vector<double>>();
        sig.catalog_version = db.catalog_version;
        append_signature(db, std::move(sig));
    }
    return db;
}

inline SignatureDb load_db_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in.good()) throw IoError("cannot open signature db: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return load_db(buf.str());
}

inline void save_db_file(const SignatureDb& db, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out.good()) throw IoError("cannot write signature db: " + path);
    out << save_db(db);
}

// FNV-1a, used to fingerprint the training database inside model files.
inline uint64_t fnv1a64(std::string_view bytes) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

} // namespace tracediag

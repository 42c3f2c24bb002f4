// Command-line entry point; subcommands are implemented once the library
// modules land. Placeholder during bring-up.
#include <cstdio>

int main() {
    std::fprintf(stderr, "tracediag: not yet wired up\n");
    return 2;
}

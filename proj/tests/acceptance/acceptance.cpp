// Runs acceptance criteria 1-9 and prints one pass/fail line per criterion.
// Exit status is 0 iff none failed. `--quick` skips the timing criterion.
#include <cstring>
#include <iostream>

#include "race/validation.hpp"

int main(int argc, char** argv) {
    race::ValidationOptions opt;
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--quick") == 0) {
            opt.quick = true;
        } else {
            std::cerr << "usage: race_acceptance [--quick]\n";
            return 2;
        }
    }
    opt.progress = &std::cout;
    const auto results = race::run_acceptance(opt);
    const bool ok = race::all_passed(results);
    std::cout << (ok ? "ACCEPTANCE PASS" : "ACCEPTANCE FAIL") << std::endl;
    return ok ? 0 : 1;
}

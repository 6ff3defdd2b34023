// Acceptance suite: one PASS/FAIL line per criterion; exit status 1 when any fails.

#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include "hfkit/acceptance.hpp"

int main(int argc, char** argv) {
    hfkit::AcceptanceOptions options;
    options.work_dir = std::filesystem::temp_directory_path() / ("hfkit-acceptance-" + std::to_string(::getpid()));
    for (int i = 1; i < argc; ++i) options.only.push_back(std::atoi(argv[i]));
    int failed = 0;
    hfkit::run_acceptance(options, [&](const hfkit::CriterionResult& r) {
        std::cout << hfkit::format_result(r) << std::endl;
        failed += !r.passed;
    });
    std::filesystem::remove_all(options.work_dir);
    std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << std::endl;
    return failed == 0 ? 0 : 1;
}

#pragma once

// Scratch directory removed on scope exit.

#include <unistd.h>

#include <filesystem>
#include <string>

namespace hfkit::testing {

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag = "hfkit") {
        static int counter = 0;
        path = std::filesystem::temp_directory_path() /
               (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
};

}  // namespace hfkit::testing

#pragma once

#include <unistd.h>

#include <chrono>
#include <filesystem>
#include <string>
#include <vector>

#include "clinfuse/core.hpp"
#include "clinfuse/rng.hpp"

namespace clinfuse::test {

inline Timestamp ts(std::int64_t seconds) { return Timestamp{std::chrono::seconds{seconds}}; }

inline PatientVisit make_visit(std::string patient, std::int64_t seq, std::int64_t admit = 0,
                               std::int64_t stay_hours = 48) {
    PatientVisit v;
    v.patient_id = std::move(patient);
    v.visit_seq = seq;
    v.admission_time = ts(admit);
    v.discharge_time = ts(admit + stay_hours * 3600);
    v.static_record.age = 60.0;
    return v;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("clinfuse_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline std::string data_dir() { return CLINFUSE_TEST_DATA_DIR; }

}  // namespace clinfuse::test

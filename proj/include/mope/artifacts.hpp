#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include <json.hpp>

#include "mope/common.hpp"
#include "mope/evaluation.hpp"
#include "mope/sha256.hpp"

namespace mope {

namespace fs = std::filesystem;

// All structured artifacts are canonical JSON: nlohmann sorts object keys
// and prints doubles with shortest round-trip formatting, so equal values
// serialize to identical bytes.
inline std::string dump_canonical(const nlohmann::json& j) { return j.dump(2) + "\n"; }

inline void write_file(const fs::path& path, const std::string& content) {
    fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw_error("io", "cannot open for writing: " + path.string());
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!f) throw_error("io", "write failed: " + path.string());
}

inline std::string read_file(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw_error("io", "missing input artifact: " + path.string());
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

inline nlohmann::json read_json(const fs::path& path) {
    try {
        return nlohmann::json::parse(read_file(path));
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        throw_error("format", "invalid JSON in " + path.string() + ": " + e.what());
    }
}

inline std::string file_hash(const fs::path& path) { return Sha256::hex(read_file(path)); }

inline nlohmann::json metrics_to_json(const RetrievalMetrics& m) {
    nlohmann::json tr = nlohmann::json::object();
    nlohmann::json ir = nlohmann::json::object();
    for (const auto& [k, v] : m.tr_at) tr[std::to_string(k)] = v;
    for (const auto& [k, v] : m.ir_at) ir[std::to_string(k)] = v;
    return nlohmann::json{{"tr_at", tr},
                          {"ir_at", ir},
                          {"tr_mean", m.tr_mean},
                          {"ir_mean", m.ir_mean},
                          {"recall_mean", m.recall_mean}};
}

inline RetrievalMetrics metrics_from_json(const nlohmann::json& j) {
    RetrievalMetrics m;
    for (const auto& [k, v] : j.at("tr_at").items()) m.tr_at[std::stoi(k)] = v.get<double>();
    for (const auto& [k, v] : j.at("ir_at").items()) m.ir_at[std::stoi(k)] = v.get<double>();
    m.tr_mean = j.at("tr_mean").get<double>();
    m.ir_mean = j.at("ir_mean").get<double>();
    m.recall_mean = j.at("recall_mean").get<double>();
    return m;
}

// Run manifest: everything needed to verify a rerun. Wall times live under
// their own key so determinism checks can exclude them.
class RunManifest {
public:
    RunManifest(std::string command, nlohmann::json config)
        : command_(std::move(command)), config_(std::move(config)) {}

    void add_input(const fs::path& path) { inputs_[path.filename().string()] = file_hash(path); }
    void add_input_hash(const std::string& name, const std::string& hash) { inputs_[name] = hash; }
    void add_output(const fs::path& path) { outputs_[path.filename().string()] = file_hash(path); }
    void add_wall_time(const std::string& phase, double seconds) { wall_times_[phase] = seconds; }

    nlohmann::json to_json() const {
        return nlohmann::json{{"tool_version", kToolVersion}, {"command", command_},
                              {"config", config_},           {"inputs", inputs_},
                              {"outputs", outputs_},         {"wall_times", wall_times_}};
    }

    void write(const fs::path& dir) const {
        write_file(dir / "manifest.json", dump_canonical(to_json()));
    }

private:
    std::string command_;
    nlohmann::json config_;
    std::map<std::string, std::string> inputs_;
    std::map<std::string, std::string> outputs_;
    std::map<std::string, double> wall_times_;
};

// Single-writer guard for an artifact directory.
class DirLock {
public:
    explicit DirLock(const fs::path& dir) : path_(dir / ".lock") {
        fs::create_directories(dir);
        std::error_code ec;
        if (fs::exists(path_))
            throw_error("io", "artifact directory is locked by another run: " + dir.string());
        std::ofstream f(path_);
        if (!f) throw_error("io", "cannot create lock file: " + path_.string());
        f << "locked\n";
    }
    ~DirLock() {
        std::error_code ec;
        fs::remove(path_, ec);
    }
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

private:
    fs::path path_;
};

class WallTimer {
public:
    WallTimer() : start_(std::chrono::steady_clock::now()) {}
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

}  // namespace mope

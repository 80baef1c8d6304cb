// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "pbt/record.hpp"

namespace pbt {

/// Where serialized model states live, keyed by checkpoint id.
class StateStore {
public:
    virtual ~StateStore() = default;
    /// Stores the blob and returns its locator.
    virtual std::string put(CheckpointId id, const std::string& bytes) = 0;
    virtual std::string get(const std::string& ref) const = 0;
};

class MemoryStateStore final : public StateStore {
public:
    std::string put(CheckpointId id, const std::string& bytes) override {
        std::lock_guard lk(mu_);
        auto ref = "mem/" + std::to_string(id);
        blobs_[ref] = bytes;
        return ref;
    }
    std::string get(const std::string& ref) const override {
        std::lock_guard lk(mu_);
        auto it = blobs_.find(ref);
        if (it == blobs_.end()) throw std::out_of_range("no state blob '" + ref + "'");
        return it->second;
    }

private:
    mutable std::mutex mu_;
    std::map<std::string, std::string> blobs_;
};

/// `states/<id>.bin` under a run directory. Blobs are written to a temporary
/// name first, so a referenced blob is always complete.
class DirectoryStateStore final : public StateStore {
public:
    explicit DirectoryStateStore(std::filesystem::path run_dir) : root_(std::move(run_dir)) {
        std::filesystem::create_directories(root_ / "states");
    }
    std::string put(CheckpointId id, const std::string& bytes) override {
        auto ref = "states/" + std::to_string(id) + ".bin";
        auto tmp = root_ / (ref + ".tmp");
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
            if (!out) throw std::runtime_error("cannot write state blob " + tmp.string());
        }
        std::filesystem::rename(tmp, root_ / ref);
        return ref;
    }
    std::string get(const std::string& ref) const override {
        std::ifstream in(root_ / ref, std::ios::binary);
        if (!in) throw std::runtime_error("cannot read state blob " + (root_ / ref).string());
        return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    }

private:
    std::filesystem::path root_;
};

/// Raw little-endian double packing used by the bundled tasks.
inline std::string pack_doubles(std::span<const double> values) {
    std::string out(values.size() * sizeof(double), '\0');
    if (!values.empty()) std::memcpy(out.data(), values.data(), out.size());
    return out;
}

inline std::vector<double> unpack_doubles(std::string_view bytes) {
    if (bytes.size() % sizeof(double) != 0) throw std::invalid_argument("state blob size is not a multiple of 8");
    std::vector<double> out(bytes.size() / sizeof(double));
    if (!out.empty()) std::memcpy(out.data(), bytes.data(), bytes.size());
    return out;
}

}  // namespace pbt

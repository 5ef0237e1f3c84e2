#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "perlearn/common.hpp"

namespace perlearn {

// Versioned binary container shared by model checkpoints, density
// estimators, dataset caches and perturbed-input dumps. Little-endian,
// doubles stored as raw IEEE-754 bytes so save -> load is bit-exact.
//
// Layout: magic "PLCN" | u32 version | u64 entry count | entries.
// Entry: u32 key length | key bytes | u8 type | payload.
// Types: 0 i64, 1 f64, 2 string, 3 f64 array (u64 ndim, u64 dims[], data),
//        4 i64 array (u64 len, data).
class Container {
public:
    static constexpr uint32_t kVersion = 1;

    void put_i64(const std::string& key, int64_t v) { i64_[key] = v; }
    void put_f64(const std::string& key, double v) { f64_[key] = v; }
    void put_str(const std::string& key, const std::string& v) { str_[key] = v; }
    void put_f64_array(const std::string& key, std::vector<uint64_t> dims,
                       std::vector<double> data) {
        uint64_t total = 1;
        for (uint64_t d : dims) total *= d;
        require(total == data.size(), ErrorCategory::dimension,
                "container: dims do not match data size for key " + key);
        arr_[key] = {std::move(dims), std::move(data)};
    }
    void put_i64_array(const std::string& key, std::vector<int64_t> v) {
        iarr_[key] = std::move(v);
    }

    bool has(const std::string& key) const {
        return i64_.count(key) || f64_.count(key) || str_.count(key) ||
               arr_.count(key) || iarr_.count(key);
    }

    int64_t get_i64(const std::string& key) const { return find(i64_, key); }
    double get_f64(const std::string& key) const { return find(f64_, key); }
    const std::string& get_str(const std::string& key) const { return find(str_, key); }
    const std::vector<uint64_t>& dims(const std::string& key) const {
        return find(arr_, key).first;
    }
    const std::vector<double>& get_f64_array(const std::string& key) const {
        return find(arr_, key).second;
    }
    const std::vector<int64_t>& get_i64_array(const std::string& key) const {
        return find(iarr_, key);
    }

    void save(const std::string& path) const {
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        require(f.good(), ErrorCategory::io, "cannot open for writing: " + path);
        f.write("PLCN", 4);
        write_u32(f, kVersion);
        uint64_t n = i64_.size() + f64_.size() + str_.size() + arr_.size() + iarr_.size();
        write_u64(f, n);
        for (const auto& [k, v] : i64_) {
            write_key(f, k, 0);
            write_u64(f, static_cast<uint64_t>(v));
        }
        for (const auto& [k, v] : f64_) {
            write_key(f, k, 1);
            write_f64(f, v);
        }
        for (const auto& [k, v] : str_) {
            write_key(f, k, 2);
            write_u64(f, v.size());
            f.write(v.data(), static_cast<std::streamsize>(v.size()));
        }
        for (const auto& [k, v] : arr_) {
            write_key(f, k, 3);
            write_u64(f, v.first.size());
            for (uint64_t d : v.first) write_u64(f, d);
            f.write(reinterpret_cast<const char*>(v.second.data()),
                    static_cast<std::streamsize>(v.second.size() * sizeof(double)));
        }
        for (const auto& [k, v] : iarr_) {
            write_key(f, k, 4);
            write_u64(f, v.size());
            f.write(reinterpret_cast<const char*>(v.data()),
                    static_cast<std::streamsize>(v.size() * sizeof(int64_t)));
        }
        require(f.good(), ErrorCategory::io, "write failed: " + path);
    }

    static Container load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        require(f.good(), ErrorCategory::missing_artifact, "cannot open: " + path);
        char magic[4];
        f.read(magic, 4);
        require(f.gcount() == 4 && std::memcmp(magic, "PLCN", 4) == 0,
                ErrorCategory::schema, "bad container magic in " + path);
        uint32_t version = read_u32(f, path);
        require(version == kVersion, ErrorCategory::schema,
                "unsupported container version in " + path);
        uint64_t n = read_u64(f, path);
        Container c;
        for (uint64_t i = 0; i < n; ++i) {
            uint32_t klen = read_u32(f, path);
            require(klen <= 4096, ErrorCategory::schema, "oversized key in " + path);
            std::string key(klen, '\0');
            f.read(key.data(), klen);
            uint8_t type = 0;
            f.read(reinterpret_cast<char*>(&type), 1);
            require(f.good(), ErrorCategory::schema, "truncated container: " + path);
            switch (type) {
                case 0:
                    c.i64_[key] = static_cast<int64_t>(read_u64(f, path));
                    break;
                case 1: {
                    uint64_t raw = read_u64(f, path);
                    double v;
                    std::memcpy(&v, &raw, 8);
                    c.f64_[key] = v;
                    break;
                }
                case 2: {
                    uint64_t len = read_u64(f, path);
                    std::string s(len, '\0');
                    f.read(s.data(), static_cast<std::streamsize>(len));
                    require(f.good(), ErrorCategory::schema, "truncated container: " + path);
                    c.str_[key] = std::move(s);
                    break;
                }
                case 3: {
                    uint64_t ndim = read_u64(f, path);
                    require(ndim <= 8, ErrorCategory::schema, "bad array rank in " + path);
                    std::vector<uint64_t> dims(ndim);
                    uint64_t total = 1;
                    for (auto& d : dims) {
                        d = read_u64(f, path);
                        total *= d;
                    }
                    std::vector<double> data(total);
                    f.read(reinterpret_cast<char*>(data.data()),
                           static_cast<std::streamsize>(total * sizeof(double)));
                    require(f.good(), ErrorCategory::schema, "truncated container: " + path);
                    c.arr_[key] = {std::move(dims), std::move(data)};
                    break;
                }
                case 4: {
                    uint64_t len = read_u64(f, path);
                    std::vector<int64_t> data(len);
                    f.read(reinterpret_cast<char*>(data.data()),
                           static_cast<std::streamsize>(len * sizeof(int64_t)));
                    require(f.good(), ErrorCategory::schema, "truncated container: " + path);
                    c.iarr_[key] = std::move(data);
                    break;
                }
                default:
                    throw Error(ErrorCategory::schema, "unknown entry type in " + path);
            }
        }
        return c;
    }

private:
    template <class M>
    static const typename M::mapped_type& find(const M& m, const std::string& key) {
        auto it = m.find(key);
        if (it == m.end())
            throw Error(ErrorCategory::schema, "container: missing key " + key);
        return it->second;
    }

    static void write_u32(std::ofstream& f, uint32_t v) {
        f.write(reinterpret_cast<const char*>(&v), 4);
    }
    static void write_u64(std::ofstream& f, uint64_t v) {
        f.write(reinterpret_cast<const char*>(&v), 8);
    }
    static void write_f64(std::ofstream& f, double v) {
        uint64_t raw;
        std::memcpy(&raw, &v, 8);
        write_u64(f, raw);
    }
    static void write_key(std::ofstream& f, const std::string& k, uint8_t type) {
        write_u32(f, static_cast<uint32_t>(k.size()));
        f.write(k.data(), static_cast<std::streamsize>(k.size()));
        f.write(reinterpret_cast<const char*>(&type), 1);
    }
    static uint32_t read_u32(std::ifstream& f, const std::string& path) {
        uint32_t v = 0;
        f.read(reinterpret_cast<char*>(&v), 4);
        require(f.gcount() == 4, ErrorCategory::schema, "truncated container: " + path);
        return v;
    }
    static uint64_t read_u64(std::ifstream& f, const std::string& path) {
        uint64_t v = 0;
        f.read(reinterpret_cast<char*>(&v), 8);
        require(f.gcount() == 8, ErrorCategory::schema, "truncated container: " + path);
        return v;
    }

    std::map<std::string, int64_t> i64_;
    std::map<std::string, double> f64_;
    std::map<std::string, std::string> str_;
    std::map<std::string, std::pair<std::vector<uint64_t>, std::vector<double>>> arr_;
    std::map<std::string, std::vector<int64_t>> iarr_;
};

}  // namespace perlearn

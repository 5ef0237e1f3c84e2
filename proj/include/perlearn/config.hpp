#pragma once

#include <cstdint>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "perlearn/common.hpp"

namespace perlearn {

// Flat INI-style config: [section] headers, key = value lines, # or ;
// comments. Keys are addressed as "section.key". The normalized form
// (sorted section.key=value lines) is what the config hash covers, so two
// files with the same effective settings hash identically.
class Config {
  public:
    Config() = default;

    static Config parse_text(const std::string& text, const std::string& origin) {
        Config cfg;
        std::istringstream in(text);
        std::string line, section;
        size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            std::string s = strip_comment(line);
            s = trim(s);
            if (s.empty()) continue;
            if (s.front() == '[') {
                require(s.back() == ']', ErrorCategory::config,
                        origin + ":" + std::to_string(lineno) + ": unterminated section header");
                section = trim(s.substr(1, s.size() - 2));
                require(!section.empty(), ErrorCategory::config,
                        origin + ":" + std::to_string(lineno) + ": empty section name");
                continue;
            }
            size_t eq = s.find('=');
            require(eq != std::string::npos, ErrorCategory::config,
                    origin + ":" + std::to_string(lineno) + ": expected key = value");
            std::string key = trim(s.substr(0, eq));
            std::string val = trim(s.substr(eq + 1));
            require(!key.empty(), ErrorCategory::config,
                    origin + ":" + std::to_string(lineno) + ": empty key");
            require(!section.empty(), ErrorCategory::config,
                    origin + ":" + std::to_string(lineno) + ": key before any [section]");
            cfg.values_[section + "." + key] = val;
        }
        return cfg;
    }

    static Config load(const std::string& path) {
        FILE* f = std::fopen(path.c_str(), "rb");
        require(f != nullptr, ErrorCategory::missing_artifact,
                "config file not found: " + path);
        std::string text;
        char buf[4096];
        size_t got;
        while ((got = std::fread(buf, 1, sizeof buf, f)) > 0) text.append(buf, got);
        std::fclose(f);
        return parse_text(text, path);
    }

    // Accepts "section.key=value"; used for --set overrides.
    void set(const std::string& assignment) {
        size_t eq = assignment.find('=');
        require(eq != std::string::npos, ErrorCategory::config,
                "--set expects section.key=value, got: " + assignment);
        std::string key = trim(assignment.substr(0, eq));
        std::string val = trim(assignment.substr(eq + 1));
        require(key.find('.') != std::string::npos, ErrorCategory::config,
                "--set key must be section.key, got: " + key);
        values_[key] = val;
    }

    void set(const std::string& key, const std::string& val) { values_[key] = val; }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_string(const std::string& key) const {
        auto it = values_.find(key);
        require(it != values_.end(), ErrorCategory::config, "missing config key: " + key);
        return it->second;
    }

    std::string get_string(const std::string& key, const std::string& dflt) const {
        auto it = values_.find(key);
        return it == values_.end() ? dflt : it->second;
    }

    int64_t get_int(const std::string& key) const { return to_int(key, get_string(key)); }
    int64_t get_int(const std::string& key, int64_t dflt) const {
        return has(key) ? get_int(key) : dflt;
    }

    uint64_t get_u64(const std::string& key) const {
        std::string v = get_string(key);
        require(!v.empty() && v[0] != '-', ErrorCategory::config,
                "config key must be >= 0: " + key);
        try {
            size_t pos = 0;
            uint64_t r = std::stoull(v, &pos);
            require(pos == v.size(), ErrorCategory::config,
                    "config key is not an integer: " + key + "=" + v);
            return r;
        } catch (const Error&) {
            throw;
        } catch (const std::exception&) {
            throw Error(ErrorCategory::config,
                        "config key is not an integer: " + key + "=" + v);
        }
    }
    uint64_t get_u64(const std::string& key, uint64_t dflt) const {
        return has(key) ? get_u64(key) : dflt;
    }

    double get_double(const std::string& key) const { return to_double(key, get_string(key)); }
    double get_double(const std::string& key, double dflt) const {
        return has(key) ? get_double(key) : dflt;
    }

    bool get_bool(const std::string& key) const {
        std::string v = get_string(key);
        if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
        if (v == "false" || v == "0" || v == "no" || v == "off") return false;
        throw Error(ErrorCategory::config, "config key is not a bool: " + key + "=" + v);
    }
    bool get_bool(const std::string& key, bool dflt) const {
        return has(key) ? get_bool(key) : dflt;
    }

    // Comma or whitespace separated list of numbers.
    std::vector<double> get_double_list(const std::string& key) const {
        std::string v = get_string(key);
        for (char& c : v)
            if (c == ',') c = ' ';
        std::istringstream in(v);
        std::vector<double> out;
        std::string tok;
        while (in >> tok) out.push_back(to_double(key, tok));
        require(!out.empty(), ErrorCategory::config, "empty list for config key: " + key);
        return out;
    }

    std::string normalized() const {
        std::string out;
        for (const auto& [k, v] : values_) {
            out += k;
            out += '=';
            out += v;
            out += '\n';
        }
        return out;
    }

    // FNV-1a 64 over the normalized text, as 16 hex digits.
    std::string hash() const { return fnv_hex(normalized()); }

    // Hash restricted to keys under the given prefixes; artifact names use
    // this so settings that cannot change an artifact's content (eval keys,
    // sweep grids, worker counts) do not invalidate it.
    std::string hash_of(const std::vector<std::string>& prefixes) const {
        std::string out;
        for (const auto& [k, v] : values_) {
            bool match = false;
            for (const auto& p : prefixes)
                if (k.rfind(p, 0) == 0) {
                    match = true;
                    break;
                }
            if (!match) continue;
            out += k;
            out += '=';
            out += v;
            out += '\n';
        }
        return fnv_hex(out);
    }

    const std::map<std::string, std::string>& entries() const { return values_; }

  private:
    static std::string fnv_hex(const std::string& text) {
        uint64_t h = 0xcbf29ce484222325ULL;
        for (unsigned char c : text) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
        return std::string(buf);
    }

    static std::string trim(const std::string& s) {
        size_t a = s.find_first_not_of(" \t\r\n");
        if (a == std::string::npos) return "";
        size_t b = s.find_last_not_of(" \t\r\n");
        return s.substr(a, b - a + 1);
    }

    static std::string strip_comment(const std::string& s) {
        for (size_t i = 0; i < s.size(); ++i)
            if (s[i] == '#' || s[i] == ';') return s.substr(0, i);
        return s;
    }

    static int64_t to_int(const std::string& key, const std::string& v) {
        try {
            size_t pos = 0;
            int64_t r = std::stoll(v, &pos);
            require(pos == v.size(), ErrorCategory::config,
                    "config key is not an integer: " + key + "=" + v);
            return r;
        } catch (const Error&) {
            throw;
        } catch (const std::exception&) {
            throw Error(ErrorCategory::config, "config key is not an integer: " + key + "=" + v);
        }
    }

    static double to_double(const std::string& key, const std::string& v) {
        try {
            size_t pos = 0;
            double r = std::stod(v, &pos);
            require(pos == v.size(), ErrorCategory::config,
                    "config key is not a number: " + key + "=" + v);
            return r;
        } catch (const Error&) {
            throw;
        } catch (const std::exception&) {
            throw Error(ErrorCategory::config, "config key is not a number: " + key + "=" + v);
        }
    }

    std::map<std::string, std::string> values_;
};

}  // namespace perlearn

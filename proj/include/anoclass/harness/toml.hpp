#pragma once

#include <cctype>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "anoclass/core/errors.hpp"

namespace anoclass::harness {

// Reader for the flat TOML subset used by config files:
//   # comment
//   [table]            (dotted names nest: [a.b])
//   key = "string" | 'literal' | 42 | -1.5e-4 | true | [1, 2, "x"]
// Dotted keys (a.b = 1) nest as well. Inline tables, multi-line strings and
// dates are not supported and raise ArgumentError with the line number.

namespace toml_detail {

class Cursor {
public:
    Cursor(const std::string& s, std::size_t line) : s_(s), line_(line) {}

    void skip_ws() {
        while (i_ < s_.size() && (s_[i_] == ' ' || s_[i_] == '\t')) ++i_;
    }
    bool done() {
        skip_ws();
        return i_ >= s_.size() || s_[i_] == '#';
    }
    char peek() const { return i_ < s_.size() ? s_[i_] : '\0'; }
    char get() { return i_ < s_.size() ? s_[i_++] : '\0'; }
    [[noreturn]] void fail(const std::string& what) const {
        throw ArgumentError("config line " + std::to_string(line_) + ": " + what);
    }

    std::string key() {
        skip_ws();
        if (peek() == '"') return basic_string();
        std::string k;
        while (i_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[i_])) || s_[i_] == '_' || s_[i_] == '-')) k += s_[i_++];
        if (k.empty()) fail("expected a key");
        return k;
    }

    std::string basic_string() {
        get();  // opening quote
        std::string out;
        while (true) {
            if (i_ >= s_.size()) fail("unterminated string");
            char c = get();
            if (c == '"') return out;
            if (c == '\\') {
                const char e = get();
                switch (e) {
                    case 'n': out += '\n'; break;
                    case 't': out += '\t'; break;
                    case '\\': out += '\\'; break;
                    case '"': out += '"'; break;
                    default: fail(std::string("unsupported escape \\") + e);
                }
            } else {
                out += c;
            }
        }
    }

    nlohmann::json value() {
        skip_ws();
        const char c = peek();
        if (c == '"') return basic_string();
        if (c == '\'') {
            get();
            const auto end = s_.find('\'', i_);
            if (end == std::string::npos) fail("unterminated string");
            std::string out = s_.substr(i_, end - i_);
            i_ = end + 1;
            return out;
        }
        if (c == '[') {
            get();
            nlohmann::json arr = nlohmann::json::array();
            while (true) {
                skip_ws();
                if (peek() == ']') {
                    get();
                    return arr;
                }
                arr.push_back(value());
                skip_ws();
                if (peek() == ',') {
                    get();
                } else if (peek() != ']') {
                    fail("expected ',' or ']' in array");
                }
            }
        }
        std::string tok;
        while (i_ < s_.size() && s_[i_] != ',' && s_[i_] != ']' && s_[i_] != '#' && !std::isspace(static_cast<unsigned char>(s_[i_])))
            tok += s_[i_++];
        if (tok == "true") return true;
        if (tok == "false") return false;
        std::string digits;
        for (char ch : tok)
            if (ch != '_') digits += ch;
        if (digits.empty()) fail("missing value");
        std::size_t used = 0;
        try {
            if (digits.find_first_of(".eE") == std::string::npos || digits.find("inf") != std::string::npos) {
                const long long v = std::stoll(digits, &used);
                if (used == digits.size()) return v;
            }
            const double d = std::stod(digits, &used);
            if (used == digits.size()) return d;
        } catch (const std::exception&) {
        }
        fail("cannot parse value '" + tok + "'");
    }

private:
    const std::string& s_;
    std::size_t line_;
    std::size_t i_ = 0;
};

inline nlohmann::json& descend(nlohmann::json& root, const std::vector<std::string>& path, std::size_t line) {
    nlohmann::json* node = &root;
    for (const auto& part : path) {
        if (!node->is_object()) throw ArgumentError("config line " + std::to_string(line) + ": '" + part + "' is not a table");
        node = &(*node)[part];
        if (node->is_null()) *node = nlohmann::json::object();
    }
    return *node;
}

inline std::vector<std::string> dotted(Cursor& c) {
    std::vector<std::string> parts{c.key()};
    c.skip_ws();
    while (c.peek() == '.') {
        c.get();
        parts.push_back(c.key());
        c.skip_ws();
    }
    return parts;
}

}  // namespace toml_detail

inline nlohmann::json parse_toml(std::istream& in) {
    nlohmann::json root = nlohmann::json::object();
    std::vector<std::string> table;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        toml_detail::Cursor c(line, lineno);
        if (c.done()) continue;
        if (c.peek() == '[') {
            c.get();
            table = toml_detail::dotted(c);
            if (c.get() != ']') c.fail("expected ']'");
            toml_detail::descend(root, table, lineno);
            if (!c.done()) c.fail("trailing characters after table header");
            continue;
        }
        auto key = toml_detail::dotted(c);
        c.skip_ws();
        if (c.get() != '=') c.fail("expected '='");
        nlohmann::json v = c.value();
        if (!c.done()) c.fail("trailing characters after value");
        std::vector<std::string> full = table;
        full.insert(full.end(), key.begin(), key.end() - 1);
        auto& parent = toml_detail::descend(root, full, lineno);
        if (parent.contains(key.back())) c.fail("duplicate key '" + key.back() + "'");
        parent[key.back()] = std::move(v);
    }
    return root;
}

inline nlohmann::json parse_toml_string(const std::string& text) {
    std::istringstream in(text);
    return parse_toml(in);
}

inline nlohmann::json parse_toml_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("config file not found: " + path.string());
    return parse_toml(in);
}

}  // namespace anoclass::harness

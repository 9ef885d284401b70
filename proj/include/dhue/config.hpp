#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace dhue {

enum class KeyType { string, path, integer, real, boolean };

struct KeySpec {
    std::string key;  // "section.name"
    KeyType type;
    std::string default_value;
    std::string help;
};

// Every key a run config may contain.
const std::vector<KeySpec>& config_schema();

// INI document with sections bank, dh_train, generate, evaluate, report,
// synth and run. Values not given take their schema default; unknown keys
// and ill-typed values are rejected with ConfigError. Relative paths resolve
// against the directory of the config file.
class RunConfig {
public:
    RunConfig() = default;

    static RunConfig from_file(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});
    static RunConfig from_string(const std::string& text, const std::filesystem::path& base_dir,
                                 const std::vector<std::string>& overrides = {});

    // Applies "section.key=value".
    void set(const std::string& assignment);
    void set(const std::string& key, const std::string& value);

    std::string str(const std::string& key) const;
    std::filesystem::path path(const std::string& key) const;  // empty when unset
    std::int64_t integer(const std::string& key) const;
    std::uint64_t seed(const std::string& key) const;
    double real(const std::string& key) const;
    bool boolean(const std::string& key) const;
    std::vector<std::string> list(const std::string& key) const;  // comma separated, trimmed

    // Every schema key with its effective value, one "key = value" per line, sorted.
    std::string canonical() const;
    // Hex SHA-256 of canonical().
    std::string hash() const;

    // Throws ConfigError naming the first missing file or directory.
    void require_existing(const std::vector<std::string>& keys) const;
    // Throws ConfigError when a key has no value.
    void require_set(const std::vector<std::string>& keys) const;

private:
    std::map<std::string, std::string> values_;
    std::filesystem::path base_dir_;

    const KeySpec& spec(const std::string& key) const;
    const std::string& raw(const std::string& key) const;
};

std::string sha256_hex(const std::string& data);

}  // namespace dhue

#pragma once

#include <filesystem>
#include <map>
#include <string>

namespace dronetune {

/// Flat key=value run configuration. Every key has a default, every key can
/// come from a config file or a --set override, and unknown keys are errors
/// (no silent typos). The fully resolved table is echoed into run
/// directories.
class RunConfig {
public:
    static RunConfig defaults();
    static const std::map<std::string, std::string>& default_table();

    /// Lines of `key = value`; '#' starts a comment. Throws ConfigError on
    /// unknown keys or malformed lines (with line numbers).
    void load_file(const std::filesystem::path& path);

    /// Throws ConfigError on unknown keys.
    void set(const std::string& key, const std::string& value);

    /// "key=value" form used by --set.
    void set_kv(const std::string& kv);

    const std::string& get(const std::string& key) const;
    long get_int(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    bool empty(const std::string& key) const { return get(key).empty(); }

    /// Sorted `key = value` lines covering every known key.
    std::string echo() const;

private:
    std::map<std::string, std::string> kv_;
};

} // namespace dronetune

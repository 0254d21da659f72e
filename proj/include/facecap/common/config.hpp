#ifndef FACECAP_COMMON_CONFIG_HPP
#define FACECAP_COMMON_CONFIG_HPP

#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

namespace facecap {

// Plain-text key=value config ('#' starts a comment). Typed getters fall back
// to the supplied default when a key is absent.
class KeyValueConfig {
public:
    KeyValueConfig() = default;

    static KeyValueConfig parse_file(const std::string& path);
    static KeyValueConfig parse_text(const std::string& text);

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::string get_string(const std::string& key, const std::string& def) const {
        auto it = values_.find(key);
        return it == values_.end() ? def : it->second;
    }
    double get_double(const std::string& key, double def) const;
    int get_int(const std::string& key, int def) const;
    bool get_bool(const std::string& key, bool def) const;

    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

} // namespace facecap

#endif

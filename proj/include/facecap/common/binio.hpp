#ifndef FACECAP_COMMON_BINIO_HPP
#define FACECAP_COMMON_BINIO_HPP

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

// Little-endian binary readers/writers for the versioned model/rig containers.
namespace facecap::binio {

static_assert(std::endian::native == std::endian::little,
              "container IO assumes a little-endian host");

inline void write_u32(std::ostream& out, uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), 4);
}

inline void write_f32(std::ostream& out, float v) {
    out.write(reinterpret_cast<const char*>(&v), 4);
}

inline void write_f32_array(std::ostream& out, const double* p, size_t n) {
    std::vector<float> buf(n);
    for (size_t i = 0; i < n; ++i) buf[i] = static_cast<float>(p[i]);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(n * 4));
}

inline uint32_t read_u32(std::istream& in) {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    if (!in) throw std::runtime_error("binio: truncated stream");
    return v;
}

inline float read_f32(std::istream& in) {
    float v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    if (!in) throw std::runtime_error("binio: truncated stream");
    return v;
}

inline void read_f32_array(std::istream& in, double* p, size_t n) {
    std::vector<float> buf(n);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * 4));
    if (!in) throw std::runtime_error("binio: truncated stream");
    for (size_t i = 0; i < n; ++i) p[i] = buf[i];
}

inline void expect_magic(std::istream& in, const char magic[4], const std::string& what) {
    char buf[4] = {};
    in.read(buf, 4);
    if (!in || std::memcmp(buf, magic, 4) != 0) {
        throw std::runtime_error("bad magic bytes for " + what);
    }
}

} // namespace facecap::binio

#endif

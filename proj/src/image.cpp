#include "facecap/common/image.hpp"

#include <zlib.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace facecap {

float bilinear_sample(const GrayImage& img, float x, float y) {
    const int x0 = static_cast<int>(std::floor(x));
    const int y0 = static_cast<int>(std::floor(y));
    const float fx = x - static_cast<float>(x0);
    const float fy = y - static_cast<float>(y0);
    const float v00 = img.at_clamped(x0, y0);
    const float v10 = img.at_clamped(x0 + 1, y0);
    const float v01 = img.at_clamped(x0, y0 + 1);
    const float v11 = img.at_clamped(x0 + 1, y0 + 1);
    return (1 - fy) * ((1 - fx) * v00 + fx * v10) + fy * ((1 - fx) * v01 + fx * v11);
}

GrayImage resize_bilinear(const GrayImage& src, int target_w, int target_h) {
    if (target_w <= 0 || target_h <= 0) throw std::invalid_argument("resize_bilinear: bad target");
    GrayImage out(target_w, target_h);
    const float sx = static_cast<float>(src.width) / target_w;
    const float sy = static_cast<float>(src.height) / target_h;
    for (int y = 0; y < target_h; ++y) {
        for (int x = 0; x < target_w; ++x) {
            out.at(x, y) = bilinear_sample(src, (x + 0.5f) * sx - 0.5f, (y + 0.5f) * sy - 0.5f);
        }
    }
    return out;
}

namespace {

void skip_pnm_space(std::istream& in) {
    int c = in.peek();
    while (c == '#' || std::isspace(c)) {
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else {
            in.get();
        }
        c = in.peek();
    }
}

int read_pnm_int(std::istream& in) {
    skip_pnm_space(in);
    int v = -1;
    in >> v;
    if (!in || v < 0) throw std::runtime_error("malformed PNM header");
    return v;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    return f;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open: " + path);
    return f;
}

} // namespace

GrayImage load_pgm(const std::string& path) {
    auto f = open_in(path);
    char m0 = 0, m1 = 0;
    f.get(m0);
    f.get(m1);
    if (m0 != 'P' || m1 != '5') throw std::runtime_error("not a binary PGM: " + path);
    const int w = read_pnm_int(f);
    const int h = read_pnm_int(f);
    const int maxval = read_pnm_int(f);
    f.get(); // single whitespace after maxval
    GrayImage img(w, h);
    if (maxval < 256) {
        std::vector<uint8_t> row(static_cast<size_t>(w));
        for (int y = 0; y < h; ++y) {
            f.read(reinterpret_cast<char*>(row.data()), w);
            for (int x = 0; x < w; ++x) img.at(x, y) = row[x] * 255.0f / maxval;
        }
    } else {
        std::vector<uint8_t> row(static_cast<size_t>(w) * 2);
        for (int y = 0; y < h; ++y) {
            f.read(reinterpret_cast<char*>(row.data()), w * 2);
            for (int x = 0; x < w; ++x) {
                const int v = (row[2 * x] << 8) | row[2 * x + 1]; // MSB first per Netpbm
                img.at(x, y) = v * 255.0f / maxval;
            }
        }
    }
    if (!f) throw std::runtime_error("truncated PGM: " + path);
    return img;
}

void save_pgm8(const std::string& path, const GrayImage& img) {
    auto f = open_out(path);
    f << "P5\n" << img.width << " " << img.height << "\n255\n";
    std::vector<uint8_t> row(static_cast<size_t>(img.width));
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            row[x] = static_cast<uint8_t>(std::clamp(std::lround(img.at(x, y)), 0L, 255L));
        }
        f.write(reinterpret_cast<const char*>(row.data()), img.width);
    }
}

ProbabilityMap load_prob_pgm16(const std::string& path) {
    GrayImage raw = load_pgm(path);
    ProbabilityMap map(raw.width, raw.height);
    for (size_t i = 0; i < raw.data.size(); ++i) map.data[i] = raw.data[i] / 255.0f;
    return map;
}

void save_prob_pgm16(const std::string& path, const ProbabilityMap& map) {
    auto f = open_out(path);
    f << "P5\n" << map.width << " " << map.height << "\n65535\n";
    std::vector<uint8_t> row(static_cast<size_t>(map.width) * 2);
    for (int y = 0; y < map.height; ++y) {
        for (int x = 0; x < map.width; ++x) {
            const float p = std::clamp(map.at(x, y), 0.0f, 1.0f);
            const int v = static_cast<int>(std::lround(p * 65535.0));
            row[2 * x] = static_cast<uint8_t>(v >> 8);
            row[2 * x + 1] = static_cast<uint8_t>(v & 0xff);
        }
        f.write(reinterpret_cast<const char*>(row.data()), row.size());
    }
}

ProbabilityMap load_pfm(const std::string& path) {
    auto f = open_in(path);
    std::string magic;
    f >> magic;
    if (magic != "Pf") throw std::runtime_error("not a grayscale PFM: " + path);
    int w = 0, h = 0;
    double scale = 0;
    f >> w >> h >> scale;
    f.get();
    if (w <= 0 || h <= 0 || scale == 0) throw std::runtime_error("malformed PFM header");
    const bool little = scale < 0;
    ProbabilityMap map(w, h);
    std::vector<float> row(static_cast<size_t>(w));
    for (int yy = 0; yy < h; ++yy) {
        const int y = h - 1 - yy; // PFM rows are bottom-up
        f.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(w) * 4);
        if (!f) throw std::runtime_error("truncated PFM: " + path);
        for (int x = 0; x < w; ++x) {
            float v = row[x];
            if (!little) {
                uint32_t u;
                std::memcpy(&u, &v, 4);
                u = __builtin_bswap32(u);
                std::memcpy(&v, &u, 4);
            }
            map.at(x, y) = v;
        }
    }
    return map;
}

void save_pfm(const std::string& path, const ProbabilityMap& map) {
    auto f = open_out(path);
    f << "Pf\n" << map.width << " " << map.height << "\n-1.0\n";
    for (int yy = map.height - 1; yy >= 0; --yy) {
        f.write(reinterpret_cast<const char*>(&map.at(0, yy)),
                static_cast<std::streamsize>(map.width) * 4);
    }
}

BinaryMask load_pbm(const std::string& path) {
    auto f = open_in(path);
    char m0 = 0, m1 = 0;
    f.get(m0);
    f.get(m1);
    if (m0 != 'P' || m1 != '4') throw std::runtime_error("not a binary PBM: " + path);
    const int w = read_pnm_int(f);
    const int h = read_pnm_int(f);
    f.get();
    BinaryMask mask(w, h);
    const int stride = (w + 7) / 8;
    std::vector<uint8_t> row(static_cast<size_t>(stride));
    for (int y = 0; y < h; ++y) {
        f.read(reinterpret_cast<char*>(row.data()), stride);
        for (int x = 0; x < w; ++x) {
            mask.at(x, y) = (row[x / 8] >> (7 - x % 8)) & 1;
        }
    }
    if (!f) throw std::runtime_error("truncated PBM: " + path);
    return mask;
}

void save_pbm(const std::string& path, const BinaryMask& mask) {
    auto f = open_out(path);
    f << "P4\n" << mask.width << " " << mask.height << "\n";
    const int stride = (mask.width + 7) / 8;
    std::vector<uint8_t> row(static_cast<size_t>(stride));
    for (int y = 0; y < mask.height; ++y) {
        std::fill(row.begin(), row.end(), 0);
        for (int x = 0; x < mask.width; ++x) {
            if (mask.at(x, y)) row[x / 8] |= static_cast<uint8_t>(1 << (7 - x % 8));
        }
        f.write(reinterpret_cast<const char*>(row.data()), stride);
    }
}

namespace {

void png_chunk(std::ostream& out, const char type[4], const std::vector<uint8_t>& payload) {
    const uint32_t len = static_cast<uint32_t>(payload.size());
    const uint8_t lenb[4] = {static_cast<uint8_t>(len >> 24), static_cast<uint8_t>(len >> 16),
                             static_cast<uint8_t>(len >> 8), static_cast<uint8_t>(len)};
    out.write(reinterpret_cast<const char*>(lenb), 4);
    uint32_t crc = crc32(0, reinterpret_cast<const Bytef*>(type), 4);
    out.write(type, 4);
    if (!payload.empty()) {
        crc = crc32(crc, payload.data(), static_cast<uInt>(payload.size()));
        out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
    }
    const uint8_t crcb[4] = {static_cast<uint8_t>(crc >> 24), static_cast<uint8_t>(crc >> 16),
                             static_cast<uint8_t>(crc >> 8), static_cast<uint8_t>(crc)};
    out.write(reinterpret_cast<const char*>(crcb), 4);
}

} // namespace

void save_png_gray(const std::string& path, const GrayImage& img) {
    auto f = open_out(path);
    static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    f.write(reinterpret_cast<const char*>(sig), 8);

    std::vector<uint8_t> ihdr(13);
    const uint32_t w = static_cast<uint32_t>(img.width), h = static_cast<uint32_t>(img.height);
    ihdr[0] = w >> 24; ihdr[1] = w >> 16; ihdr[2] = w >> 8; ihdr[3] = w;
    ihdr[4] = h >> 24; ihdr[5] = h >> 16; ihdr[6] = h >> 8; ihdr[7] = h;
    ihdr[8] = 8;  // bit depth
    ihdr[9] = 0;  // grayscale
    png_chunk(f, "IHDR", ihdr);

    // filter byte 0 per scanline
    std::vector<uint8_t> raw(static_cast<size_t>(img.height) * (img.width + 1));
    for (int y = 0; y < img.height; ++y) {
        uint8_t* row = raw.data() + static_cast<size_t>(y) * (img.width + 1);
        row[0] = 0;
        for (int x = 0; x < img.width; ++x) {
            row[1 + x] = static_cast<uint8_t>(std::clamp(std::lround(img.at(x, y)), 0L, 255L));
        }
    }
    uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<uint8_t> comp(comp_len);
    if (compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK) {
        throw std::runtime_error("png deflate failed");
    }
    comp.resize(comp_len);
    png_chunk(f, "IDAT", comp);
    png_chunk(f, "IEND", {});
}

void save_mask_png(const std::string& path, const BinaryMask& mask) {
    GrayImage g(mask.width, mask.height);
    for (size_t i = 0; i < mask.data.size(); ++i) g.data[i] = mask.data[i] ? 255.0f : 0.0f;
    save_png_gray(path, g);
}

} // namespace facecap

#ifndef SIMATTN_IO_HPP
#define SIMATTN_IO_HPP

#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "simattn/tensor.hpp"

namespace simattn {

// Binary PGM (P5), maxval 255, pixel = round(255 * v) with v expected in [0,1].
inline void write_pgm(const std::string& path, const std::vector<double>& values, int h, int w) {
    if (static_cast<int>(values.size()) != h * w)
        throw std::invalid_argument("write_pgm: size mismatch");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "P5\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> px(values.size());
    for (size_t i = 0; i < values.size(); ++i) {
        double v = std::min(1.0, std::max(0.0, values[i]));
        px[i] = static_cast<unsigned char>(std::lround(255.0 * v));
    }
    out.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
    if (!out) throw std::runtime_error("write failed: " + path);
}

// FNV-1a over a file's bytes; used for manifest dataset hashes.
inline std::string file_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open for hashing: " + path);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[65536];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
        if (!in) break;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

// key=value structured text, one entry per line
class KeyValueFile {
public:
    void set(const std::string& key, const std::string& value) {
        entries_.push_back({key, value});
    }
    void set(const std::string& key, double value) {
        std::ostringstream os;
        os << std::setprecision(17) << value;
        entries_.push_back({key, os.str()});
    }
    void set(const std::string& key, long value) { entries_.push_back({key, std::to_string(value)}); }

    void save(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw std::runtime_error("cannot open for writing: " + path);
        for (const auto& [k, v] : entries_) out << k << "=" << v << "\n";
        if (!out) throw std::runtime_error("write failed: " + path);
    }

    std::string str() const {
        std::ostringstream os;
        for (const auto& [k, v] : entries_) os << k << "=" << v << "\n";
        return os.str();
    }

private:
    std::vector<std::pair<std::string, std::string>> entries_;
};

}  // namespace simattn

#endif  // SIMATTN_IO_HPP

#include "hemis/htf.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <vector>

namespace hemis {

namespace {

constexpr char kMagic[4] = {'H', 'T', 'F', '1'};

void write_u64_le(std::ostream& out, std::uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) {
        buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    }
    out.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t read_u64_le(std::istream& in, const char* context) {
    unsigned char buf[8];
    in.read(reinterpret_cast<char*>(buf), 8);
    if (in.gcount() != 8) {
        throw std::runtime_error(std::string("htf: truncated file while reading ") + context);
    }
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    }
    return v;
}

template <typename T>
void write_payload(std::ostream& out, const T* values, std::size_t n);

template <>
void write_payload<float>(std::ostream& out, const float* values, std::size_t n) {
    std::vector<unsigned char> buf(n * 4);
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint32_t bits = std::bit_cast<std::uint32_t>(values[i]);
        buf[4 * i + 0] = static_cast<unsigned char>(bits & 0xff);
        buf[4 * i + 1] = static_cast<unsigned char>((bits >> 8) & 0xff);
        buf[4 * i + 2] = static_cast<unsigned char>((bits >> 16) & 0xff);
        buf[4 * i + 3] = static_cast<unsigned char>((bits >> 24) & 0xff);
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

template <>
void write_payload<double>(std::ostream& out, const double* values, std::size_t n) {
    std::vector<unsigned char> buf(n * 8);
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint64_t bits = std::bit_cast<std::uint64_t>(values[i]);
        for (int b = 0; b < 8; ++b) {
            buf[8 * i + static_cast<std::size_t>(b)] =
                static_cast<unsigned char>((bits >> (8 * b)) & 0xff);
        }
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

template <typename T>
void read_payload(std::istream& in, T* values, std::size_t n);

template <>
void read_payload<float>(std::istream& in, float* values, std::size_t n) {
    std::vector<unsigned char> buf(n * 4);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (static_cast<std::size_t>(in.gcount()) != buf.size()) {
        throw std::runtime_error("htf: truncated file while reading payload");
    }
    for (std::size_t i = 0; i < n; ++i) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) {
            bits |= static_cast<std::uint32_t>(buf[4 * i + static_cast<std::size_t>(b)]) << (8 * b);
        }
        values[i] = std::bit_cast<float>(bits);
    }
}

template <>
void read_payload<double>(std::istream& in, double* values, std::size_t n) {
    std::vector<unsigned char> buf(n * 8);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (static_cast<std::size_t>(in.gcount()) != buf.size()) {
        throw std::runtime_error("htf: truncated file while reading payload");
    }
    for (std::size_t i = 0; i < n; ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) {
            bits |= static_cast<std::uint64_t>(buf[8 * i + static_cast<std::size_t>(b)]) << (8 * b);
        }
        values[i] = std::bit_cast<double>(bits);
    }
}

}  // namespace

template <typename T>
void save_htf(const Tensor<T>& t, std::ostream& out) {
    if (t.rank() > kHtfMaxRank) {
        throw std::invalid_argument("htf: rank exceeds 8");
    }
    if (t.empty()) {
        throw std::invalid_argument("htf: cannot save an empty tensor");
    }
    out.write(kMagic, 4);
    const unsigned char dtype = static_cast<unsigned char>(dtype_of<T>::value);
    const unsigned char rank = static_cast<unsigned char>(t.rank());
    out.put(static_cast<char>(dtype));
    out.put(static_cast<char>(rank));
    for (std::size_t d = 0; d < t.rank(); ++d) {
        write_u64_le(out, t.dim(d));
    }
    write_payload<T>(out, t.data(), t.numel());
    if (!out) {
        throw std::runtime_error("htf: write failed");
    }
}

template <typename T>
void save_htf(const Tensor<T>& t, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("htf: cannot open for writing: " + path);
    }
    save_htf(t, f);
    f.close();
    if (!f) {
        throw std::runtime_error("htf: write failed: " + path);
    }
}

template <typename T>
Tensor<T> load_htf(std::istream& in) {
    char header[6];
    in.read(header, 6);
    if (in.gcount() != 6) {
        throw std::runtime_error("htf: truncated file while reading header");
    }
    if (std::memcmp(header, kMagic, 4) != 0) {
        throw std::runtime_error("htf: bad magic");
    }
    const unsigned char dtype = static_cast<unsigned char>(header[4]);
    const unsigned char rank = static_cast<unsigned char>(header[5]);
    if (dtype != static_cast<unsigned char>(DType::F32) &&
        dtype != static_cast<unsigned char>(DType::F64)) {
        throw std::runtime_error("htf: unknown dtype code " + std::to_string(dtype));
    }
    if (dtype != static_cast<unsigned char>(dtype_of<T>::value)) {
        throw std::runtime_error("htf: dtype mismatch between file and requested tensor type");
    }
    if (rank == 0 || rank > kHtfMaxRank) {
        throw std::runtime_error("htf: invalid rank " + std::to_string(rank));
    }
    std::vector<std::size_t> shape(rank);
    std::size_t numel = 1;
    for (unsigned r = 0; r < rank; ++r) {
        const std::uint64_t d = read_u64_le(in, "dimensions");
        if (d == 0) {
            throw std::runtime_error("htf: zero dimension");
        }
        if (numel > (std::size_t(1) << 40) / d) {
            throw std::runtime_error("htf: tensor too large");
        }
        shape[r] = static_cast<std::size_t>(d);
        numel *= shape[r];
    }
    Tensor<T> t(shape);
    read_payload<T>(in, t.data(), numel);
    check_finite(t, "htf load");
    return t;
}

template <typename T>
Tensor<T> load_htf(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("htf: cannot open for reading: " + path);
    }
    return load_htf<T>(f);
}

template void save_htf<float>(const Tensor<float>&, std::ostream&);
template void save_htf<double>(const Tensor<double>&, std::ostream&);
template void save_htf<float>(const Tensor<float>&, const std::string&);
template void save_htf<double>(const Tensor<double>&, const std::string&);
template Tensor<float> load_htf<float>(std::istream&);
template Tensor<double> load_htf<double>(std::istream&);
template Tensor<float> load_htf<float>(const std::string&);
template Tensor<double> load_htf<double>(const std::string&);

}  // namespace hemis

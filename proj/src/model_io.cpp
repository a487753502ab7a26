#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include <json.hpp>

#include "hemis/htf.hpp"
#include "hemis/model.hpp"

namespace hemis {

namespace {

constexpr char kModelMagic[4] = {'H', 'M', 'Z', '1'};
constexpr std::uint32_t kModelFormatVersion = 1;

void write_u32_le(std::ostream& out, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) {
        b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    }
    out.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64_le(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) {
        b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    }
    out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t read_u32_le(std::istream& in, const char* what) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (in.gcount() != 4) {
        throw std::runtime_error(std::string("model: truncated file while reading ") + what);
    }
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
        v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    }
    return v;
}

std::uint64_t read_u64_le(std::istream& in, const char* what) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (in.gcount() != 8) {
        throw std::runtime_error(std::string("model: truncated file while reading ") + what);
    }
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    }
    return v;
}

template <typename T>
const char* dtype_name() {
    return std::is_same_v<T, float> ? "f32" : "f64";
}

}  // namespace

void HemisArch::validate() const {
    if (n_modalities == 0) {
        throw std::invalid_argument("arch: need at least one modality");
    }
    if (f1 == 0 || f2 == 0 || f3 == 0) {
        throw std::invalid_argument("arch: feature-map counts must be positive");
    }
    if (kernel % 2 == 0 || kernel == 0) {
        throw std::invalid_argument("arch: kernel size must be odd");
    }
    if (n_classes < 2) {
        throw std::invalid_argument("arch: need at least two classes");
    }
    if (!modality_names.empty() && modality_names.size() != n_modalities) {
        throw std::invalid_argument("arch: modality name count mismatch");
    }
}

template <typename T>
void save_model(const HemisParams<T>& params, const std::string& path) {
    params.arch.validate();
    nlohmann::json header;
    header["format_version"] = kModelFormatVersion;
    header["dtype"] = dtype_name<T>();
    header["arch"] = {{"n_modalities", params.arch.n_modalities},
                      {"f1", params.arch.f1},
                      {"f2", params.arch.f2},
                      {"f3", params.arch.f3},
                      {"kernel", params.arch.kernel},
                      {"n_classes", params.arch.n_classes},
                      {"modality_names", params.arch.modality_names}};
    const std::string header_text = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("model: cannot open " + path + " for writing");
    }
    out.write(kModelMagic, 4);
    write_u32_le(out, static_cast<std::uint32_t>(header_text.size()));
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));

    for (const auto& [name, tensor] : named_tensors(params)) {
        std::ostringstream blob;
        save_htf(*tensor, blob);
        const std::string bytes = blob.str();
        write_u32_le(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u64_le(out, bytes.size());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    if (!out) {
        throw std::runtime_error("model: write failed for " + path);
    }
}

template <typename T>
HemisParams<T> load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("model: cannot open " + path);
    }
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || !std::equal(magic, magic + 4, kModelMagic)) {
        throw std::runtime_error("model: bad magic (not an HMZ1 file)");
    }
    const std::uint32_t header_len = read_u32_le(in, "header length");
    std::string header_text(header_len, '\0');
    in.read(header_text.data(), header_len);
    if (in.gcount() != static_cast<std::streamsize>(header_len)) {
        throw std::runtime_error("model: truncated file while reading header");
    }
    nlohmann::json header = nlohmann::json::parse(header_text, nullptr, false);
    if (header.is_discarded()) {
        throw std::runtime_error("model: header is not valid JSON");
    }
    if (header.value("format_version", 0u) != kModelFormatVersion) {
        throw std::runtime_error("model: unsupported format version");
    }
    if (header.value("dtype", "") != dtype_name<T>()) {
        throw std::runtime_error("model: dtype mismatch (file holds " +
                                 header.value("dtype", std::string("?")) + ")");
    }
    HemisArch arch;
    const auto& ja = header.at("arch");
    arch.n_modalities = ja.at("n_modalities").get<std::size_t>();
    arch.f1 = ja.at("f1").get<std::size_t>();
    arch.f2 = ja.at("f2").get<std::size_t>();
    arch.f3 = ja.at("f3").get<std::size_t>();
    arch.kernel = ja.at("kernel").get<std::size_t>();
    arch.n_classes = ja.at("n_classes").get<std::size_t>();
    arch.modality_names = ja.at("modality_names").get<std::vector<std::string>>();
    arch.validate();

    std::unordered_map<std::string, Tensor<T>> loaded;
    while (true) {
        unsigned char probe;
        in.read(reinterpret_cast<char*>(&probe), 1);
        if (in.gcount() == 0) {
            break;  // clean end of records
        }
        in.seekg(-1, std::ios::cur);
        const std::uint32_t name_len = read_u32_le(in, "record name length");
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (in.gcount() != static_cast<std::streamsize>(name_len)) {
            throw std::runtime_error("model: truncated file while reading record name");
        }
        const std::uint64_t blob_len = read_u64_le(in, "record length");
        std::string blob(blob_len, '\0');
        in.read(blob.data(), static_cast<std::streamsize>(blob_len));
        if (in.gcount() != static_cast<std::streamsize>(blob_len)) {
            throw std::runtime_error("model: truncated file while reading tensor '" + name + "'");
        }
        std::istringstream blob_in(blob);
        loaded.emplace(name, load_htf<T>(blob_in));
    }

    // Assemble into the canonical structure; every expected tensor must be
    // present with the shape the architecture implies.
    HemisParams<T> params;
    params.arch = arch;
    if (params.arch.modality_names.empty()) {
        for (std::size_t k = 0; k < arch.n_modalities; ++k) {
            params.arch.modality_names.push_back("mod" + std::to_string(k));
        }
    }
    for (std::size_t k = 0; k < arch.n_modalities; ++k) {
        params.c1.push_back({Tensor<T>({arch.f1, 1, arch.kernel, arch.kernel}),
                             Tensor<T>({arch.f1})});
        params.c2.push_back({Tensor<T>({arch.f2, arch.f1, arch.kernel, arch.kernel}),
                             Tensor<T>({arch.f2})});
    }
    params.c3 = {Tensor<T>({arch.f3, 2 * arch.f2, arch.kernel, arch.kernel}),
                 Tensor<T>({arch.f3})};
    params.c4 = {Tensor<T>({arch.n_classes, arch.f3, arch.kernel, arch.kernel}),
                 Tensor<T>({arch.n_classes})};

    std::size_t used = 0;
    for (auto& [name, slot] : named_tensors(params)) {
        auto it = loaded.find(name);
        if (it == loaded.end()) {
            throw std::runtime_error("model: missing tensor entry '" + name + "'");
        }
        if (it->second.shape() != slot->shape()) {
            throw std::runtime_error("model: tensor '" + name + "' has unexpected shape");
        }
        *slot = std::move(it->second);
        ++used;
    }
    if (used != loaded.size()) {
        throw std::runtime_error("model: file contains unrecognized tensor entries");
    }
    return params;
}

template void save_model<float>(const HemisParams<float>&, const std::string&);
template void save_model<double>(const HemisParams<double>&, const std::string&);
template HemisParams<float> load_model<float>(const std::string&);
template HemisParams<double> load_model<double>(const std::string&);

}  // namespace hemis

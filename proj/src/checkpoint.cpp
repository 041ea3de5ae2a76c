#include "npssl/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "npssl/errors.hpp"

namespace npssl::io {

namespace {

constexpr char kMagic[8] = {'N', 'P', 'S', 'S', 'L', 'C', 'K', '1'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw IoError("checkpoint: truncated file");
    return v;
}

const NamedTensor& find(std::span<const NamedTensor> ts, const std::string& name) {
    for (const auto& t : ts)
        if (t.name == name) return t;
    throw IoError("checkpoint: missing tensor " + name);
}

void copy_into(const NamedTensor& src, std::span<double> dst, const std::string& name) {
    if (src.data.size() != dst.size())
        throw IoError("checkpoint: size mismatch for tensor " + name);
    std::copy(src.data.begin(), src.data.end(), dst.begin());
}

std::vector<NamedTensor> bank_tensors(const np::MemoryBank& bank, const std::string& prefix) {
    NamedTensor feats{prefix + "/features", {bank.size(), bank.feat_dim()}, {}};
    NamedTensor probs{prefix + "/probs", {bank.size(), bank.n_classes()}, {}};
    feats.data.reserve(bank.size() * bank.feat_dim());
    probs.data.reserve(bank.size() * bank.n_classes());
    for (std::size_t i = 0; i < bank.size(); ++i) {
        const auto& r = bank.at(i);  // oldest first, preserving FIFO order
        feats.data.insert(feats.data.end(), r.feature.begin(), r.feature.end());
        probs.data.insert(probs.data.end(), r.probs.begin(), r.probs.end());
    }
    return {std::move(feats), std::move(probs)};
}

np::MemoryBank restore_bank(std::span<const NamedTensor> ts, const std::string& prefix,
                            std::size_t capacity, std::size_t feat_dim,
                            std::size_t n_classes) {
    const NamedTensor& feats = find(ts, prefix + "/features");
    const NamedTensor& probs = find(ts, prefix + "/probs");
    if (feats.shape.size() != 2 || feats.shape[1] != feat_dim ||
        probs.shape.size() != 2 || probs.shape[0] != feats.shape[0] ||
        probs.shape[1] != n_classes)
        throw IoError("checkpoint: bad bank tensor shapes for " + prefix);
    const std::size_t n = feats.shape[0];
    std::vector<np::BankRecord> records(n);
    for (std::size_t i = 0; i < n; ++i) {
        records[i].feature.assign(feats.data.begin() + i * feat_dim,
                                  feats.data.begin() + (i + 1) * feat_dim);
        records[i].probs.assign(probs.data.begin() + i * n_classes,
                                probs.data.begin() + (i + 1) * n_classes);
    }
    np::MemoryBank bank(capacity, feat_dim, n_classes, 0);
    bank.assign(std::move(records));
    return bank;
}

}  // namespace

void save_checkpoint(const std::string& path, std::span<const NamedTensor> tensors) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("checkpoint: cannot open " + path + " for writing");
    os.write(kMagic, sizeof(kMagic));
    write_pod<std::uint32_t>(os, kVersion);
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.name.size()));
        os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.shape.size()));
        std::size_t numel = 1;
        for (std::size_t d : t.shape) {
            write_pod<std::uint64_t>(os, d);
            numel *= d;
        }
        if (numel != t.data.size()) throw IoError("checkpoint: shape/data mismatch for " + t.name);
        os.write(reinterpret_cast<const char*>(t.data.data()),
                 static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    }
    if (!os) throw IoError("checkpoint: write failed for " + path);
}

std::vector<NamedTensor> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("checkpoint: cannot open " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw IoError("checkpoint: bad magic in " + path);
    const auto version = read_pod<std::uint32_t>(is);
    if (version != kVersion) throw IoError("checkpoint: unsupported version");
    const auto count = read_pod<std::uint32_t>(is);
    if (count > 1u << 20) throw IoError("checkpoint: implausible tensor count");
    std::vector<NamedTensor> out(count);
    for (auto& t : out) {
        const auto name_len = read_pod<std::uint32_t>(is);
        if (name_len > 4096) throw IoError("checkpoint: implausible name length");
        t.name.resize(name_len);
        is.read(t.name.data(), name_len);
        const auto ndim = read_pod<std::uint32_t>(is);
        if (ndim > 8) throw IoError("checkpoint: implausible rank");
        t.shape.resize(ndim);
        std::size_t numel = 1;
        for (auto& d : t.shape) {
            d = static_cast<std::size_t>(read_pod<std::uint64_t>(is));
            numel *= d;
        }
        if (numel > 1u << 28) throw IoError("checkpoint: implausible tensor size");
        t.data.resize(numel);
        is.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(numel * sizeof(double)));
        if (!is) throw IoError("checkpoint: truncated tensor data");
    }
    return out;
}

std::vector<NamedTensor> to_tensors(np::NpModel& student, np::NpModel& ema,
                                    const np::MemoryBank& bank_a,
                                    const np::MemoryBank& bank_b) {
    std::vector<NamedTensor> out;
    out.push_back({"meta/dims",
                   {5},
                   {static_cast<double>(student.d_in), static_cast<double>(student.feat_dim),
                    static_cast<double>(student.latent_dim),
                    static_cast<double>(student.n_classes),
                    static_cast<double>(student.hidden_dim)}});
    out.push_back({"meta/bank_capacity", {1}, {static_cast<double>(bank_a.capacity())}});
    for (auto& ref : student.tensor_refs())
        out.push_back({"model/" + ref.name, ref.shape,
                       Vector(ref.data.begin(), ref.data.end())});
    for (auto& ref : ema.tensor_refs())
        out.push_back({"ema/" + ref.name, ref.shape, Vector(ref.data.begin(), ref.data.end())});
    for (auto& t : bank_tensors(bank_a, "bank_a")) out.push_back(std::move(t));
    for (auto& t : bank_tensors(bank_b, "bank_b")) out.push_back(std::move(t));
    return out;
}

CheckpointState from_tensors(std::span<const NamedTensor> tensors) {
    const NamedTensor& dims = find(tensors, "meta/dims");
    if (dims.data.size() != 5) throw IoError("checkpoint: bad meta/dims");
    const auto d_in = static_cast<std::size_t>(dims.data[0]);
    const auto feat = static_cast<std::size_t>(dims.data[1]);
    const auto lat = static_cast<std::size_t>(dims.data[2]);
    const auto cls = static_cast<std::size_t>(dims.data[3]);
    const auto hid = static_cast<std::size_t>(dims.data[4]);
    const auto cap = static_cast<std::size_t>(find(tensors, "meta/bank_capacity").data[0]);

    np::NpModel student = np::NpModel::init(d_in, feat, lat, cls, hid, 0);
    np::NpModel ema = np::NpModel::init(d_in, feat, lat, cls, hid, 0);
    for (auto& ref : student.tensor_refs())
        copy_into(find(tensors, "model/" + ref.name), ref.data, ref.name);
    for (auto& ref : ema.tensor_refs())
        copy_into(find(tensors, "ema/" + ref.name), ref.data, ref.name);

    return CheckpointState{std::move(student), std::move(ema),
                           restore_bank(tensors, "bank_a", cap, feat, cls),
                           restore_bank(tensors, "bank_b", cap, feat, cls)};
}

}  // namespace npssl::io

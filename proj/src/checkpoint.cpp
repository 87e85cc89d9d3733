#include "gkd/checkpoint.hpp"

#include "gkd/config.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace gkd {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'G', 'K', 'D', 'C', 'K', 'P', 'T', '\0'};

template <typename T>
void put_raw(std::ostream& out, const T& v)
{
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get_raw(std::istream& in, const std::string& what)
{
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw std::runtime_error("truncated checkpoint while reading " + what);
    return v;
}

} // namespace

void Checkpoint::put(const std::string& name, const Tensor& t)
{
    for (auto& [n, v] : entries)
        if (n == name) {
            v = t;
            return;
        }
    entries.emplace_back(name, t);
}

bool Checkpoint::contains(const std::string& name) const
{
    for (const auto& e : entries)
        if (e.first == name) return true;
    return false;
}

const Tensor& Checkpoint::get(const std::string& name) const
{
    for (const auto& e : entries)
        if (e.first == name) return e.second;
    throw std::runtime_error("checkpoint has no entry '" + name + "'");
}

std::vector<std::pair<std::string, Tensor>> Checkpoint::with_prefix(const std::string& prefix) const
{
    std::vector<std::pair<std::string, Tensor>> out;
    for (const auto& [n, t] : entries)
        if (n.rfind(prefix, 0) == 0) out.emplace_back(n.substr(prefix.size()), t);
    return out;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt)
{
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write checkpoint " + tmp.string());
        out.write(kMagic, sizeof kMagic);
        put_raw(out, ckpt.version);
        put_raw(out, ckpt.config_hash);
        put_raw(out, static_cast<std::uint32_t>(ckpt.entries.size()));
        for (const auto& [name, t] : ckpt.entries) {
            put_raw(out, static_cast<std::uint32_t>(name.size()));
            out.write(name.data(), static_cast<std::streamsize>(name.size()));
            put_raw(out, static_cast<std::uint32_t>(t.rank()));
            for (Index d : t.shape()) put_raw(out, static_cast<std::uint64_t>(d));
            out.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(Scalar)));
        }
        if (!out.flush()) throw std::runtime_error("failed writing checkpoint " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
    char magic[8];
    if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
        throw std::runtime_error(path.string() + " is not a checkpoint file");
    Checkpoint c;
    c.version = get_raw<std::uint32_t>(in, "version");
    if (c.version != kCheckpointVersion)
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(c.version) + " in " + path.string());
    c.config_hash = get_raw<std::uint64_t>(in, "config hash");
    const auto n = get_raw<std::uint32_t>(in, "entry count");
    for (std::uint32_t i = 0; i < n; ++i) {
        const auto len = get_raw<std::uint32_t>(in, "name length");
        if (len > 4096) throw std::runtime_error("corrupt checkpoint entry name in " + path.string());
        std::string name(len, '\0');
        if (!in.read(name.data(), len)) throw std::runtime_error("truncated checkpoint entry name");
        const auto rank = get_raw<std::uint32_t>(in, name + " rank");
        if (rank == 0 || rank > 8) throw std::runtime_error("corrupt rank for checkpoint entry " + name);
        Shape shape;
        for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<Index>(get_raw<std::uint64_t>(in, name + " shape")));
        Tensor t(shape);
        if (!in.read(reinterpret_cast<char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(Scalar))))
            throw std::runtime_error("truncated data for checkpoint entry " + name);
        c.entries.emplace_back(std::move(name), std::move(t));
    }
    return c;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, std::uint64_t expected_hash, bool force)
{
    Checkpoint c = read_checkpoint(path);
    if (c.config_hash != expected_hash && !force)
        throw CheckpointMismatch("checkpoint " + path.string() + " was written with config hash " + hex64(c.config_hash) +
                                 " but the current config hashes to " + hex64(expected_hash) + " (pass --force to load anyway)");
    return c;
}

} // namespace gkd

#include "gkd/dataset_io.hpp"

#include <bit>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>

namespace gkd {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {

void write_track(std::ostream& os, const ObjectTrack& o)
{
    os << static_cast<int>(o.shape) << ' ' << o.size << ' ' << o.x0 << ' ' << o.y0 << ' ' << o.vx << ' ' << o.vy << ' '
       << std::setprecision(17) << o.intensity;
}

ObjectTrack read_track(std::istream& is)
{
    ObjectTrack o;
    int shape = 0;
    is >> shape >> o.size >> o.x0 >> o.y0 >> o.vx >> o.vy >> o.intensity;
    o.shape = static_cast<ShapeKind>(shape);
    return o;
}

} // namespace

void save_split(const std::filesystem::path& dir, const Split& split)
{
    std::filesystem::create_directories(dir);
    const GeometryConfig& g = split.info.geometry;
    {
        std::ofstream bin(dir / "clips.bin", std::ios::binary);
        if (!bin) throw std::runtime_error("cannot write " + (dir / "clips.bin").string());
        for (const VideoClip& c : split.clips)
            bin.write(reinterpret_cast<const char*>(c.frames.data().data()), static_cast<std::streamsize>(c.frames.size() * sizeof(Scalar)));
    }
    std::ofstream m(dir / "manifest.txt");
    if (!m) throw std::runtime_error("cannot write " + (dir / "manifest.txt").string());
    m << "format = gkd-clips\n"
      << "generator_version = " << kGeneratorVersion << '\n'
      << "split = " << split.info.split << '\n'
      << "seed = " << split.info.seed << '\n'
      << "n_clips = " << split.clips.size() << '\n'
      << "n_classes = " << split.info.n_classes << '\n'
      << "clip_shape = " << g.frames << ' ' << g.channels << ' ' << g.height << ' ' << g.width << '\n'
      << "object_size = " << g.object_size << '\n'
      << "speed = " << g.min_speed << ' ' << g.max_speed << '\n'
      << "distractors = " << g.distractors << '\n'
      << std::setprecision(17) << "noise = " << g.noise << '\n'
      << "intensity = " << g.target_min_intensity << ' ' << g.distractor_max_intensity << '\n';
    for (int k = 0; k < split.info.n_classes; ++k) m << "label " << k << " = " << class_name(k) << '\n';
    for (std::size_t i = 0; i < split.clips.size(); ++i) {
        const VideoClip& c = split.clips[i];
        m << "clip " << i << " = " << c.label << ' ' << c.meta.noise_seed << ' ';
        write_track(m, c.meta.target);
        m << ' ' << c.meta.distractors.size();
        for (const auto& d : c.meta.distractors) {
            m << ' ';
            write_track(m, d);
        }
        m << '\n';
    }
}

Split load_split(const std::filesystem::path& dir)
{
    std::ifstream m(dir / "manifest.txt");
    if (!m) throw std::runtime_error("missing manifest " + (dir / "manifest.txt").string());
    std::map<std::string, std::string> kv;
    std::vector<std::string> clip_lines;
    std::string line;
    while (std::getline(m, line)) {
        const auto eq = line.find(" = ");
        if (eq == std::string::npos) continue;
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 3);
        if (key.rfind("clip ", 0) == 0)
            clip_lines.push_back(val);
        else
            kv[key] = val;
    }
    if (kv["format"] != "gkd-clips") throw std::runtime_error("not a clip manifest: " + dir.string());
    if (std::stoi(kv["generator_version"]) != kGeneratorVersion) throw std::runtime_error("unsupported generator version in " + dir.string());

    Split s;
    s.info.split = kv["split"];
    s.info.seed = std::stoull(kv["seed"]);
    s.info.n_classes = std::stoi(kv["n_classes"]);
    GeometryConfig& g = s.info.geometry;
    std::istringstream(kv["clip_shape"]) >> g.frames >> g.channels >> g.height >> g.width;
    g.object_size = std::stoll(kv["object_size"]);
    std::istringstream(kv["speed"]) >> g.min_speed >> g.max_speed;
    g.distractors = std::stoll(kv["distractors"]);
    g.noise = std::stod(kv["noise"]);
    std::istringstream(kv["intensity"]) >> g.target_min_intensity >> g.distractor_max_intensity;
    const auto n = static_cast<std::size_t>(std::stoull(kv["n_clips"]));
    if (clip_lines.size() != n) throw std::runtime_error("manifest clip count mismatch in " + dir.string());

    std::ifstream bin(dir / "clips.bin", std::ios::binary);
    if (!bin) throw std::runtime_error("missing " + (dir / "clips.bin").string());
    const Shape shape{g.frames, g.channels, g.height, g.width};
    for (std::size_t i = 0; i < n; ++i) {
        VideoClip c;
        std::istringstream is(clip_lines[i]);
        std::size_t nd = 0;
        is >> c.label >> c.meta.noise_seed;
        c.meta.target = read_track(is);
        is >> nd;
        for (std::size_t d = 0; d < nd; ++d) c.meta.distractors.push_back(read_track(is));
        if (!is) throw std::runtime_error("malformed clip line " + std::to_string(i) + " in " + dir.string());
        c.frames = Tensor(shape);
        bin.read(reinterpret_cast<char*>(c.frames.data().data()), static_cast<std::streamsize>(c.frames.size() * sizeof(Scalar)));
        if (!bin) throw std::runtime_error("clips.bin is truncated in " + dir.string());
        s.clips.push_back(std::move(c));
    }
    return s;
}

std::uint64_t split_seed(std::uint64_t seed, int split_index) { return mix_seed(seed, 0xDA7A + static_cast<std::uint64_t>(split_index)); }

std::vector<Split> generate_splits(std::uint64_t seed, const DatasetSizes& sizes, int n_classes, const GeometryConfig& geometry)
{
    const std::pair<const char*, Index> parts[] = {{"train", sizes.train}, {"val", sizes.val}, {"test", sizes.test}};
    std::vector<Split> out;
    int index = 0;
    for (auto [name, count] : parts) {
        Split s;
        s.info = {name, split_seed(seed, index++), n_classes, geometry};
        s.clips = generate_dataset(s.info.seed, count, n_classes, geometry);
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace gkd

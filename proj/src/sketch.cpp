#include "gkd/sketch.hpp"

namespace gkd {

void SketchParams::validate() const
{
    if (e < 1) throw std::invalid_argument("sketch dimension must be positive");
    if (h.size() != s.size()) throw std::invalid_argument("sketch hash and sign arrays differ in length");
    for (std::size_t i = 0; i < h.size(); ++i) {
        if (h[i] < 0 || h[i] >= e) throw std::invalid_argument("sketch bucket out of range");
        if (s[i] != 1 && s[i] != -1) throw std::invalid_argument("sketch sign must be +1 or -1");
    }
}

SketchParams SketchParams::draw(Index input_length, Index e, std::mt19937_64& rng)
{
    if (input_length < 1 || e < 1) throw std::invalid_argument("sketch lengths must be positive");
    SketchParams p;
    p.e = e;
    p.h.resize(static_cast<std::size_t>(input_length));
    p.s.resize(static_cast<std::size_t>(input_length));
    std::uniform_int_distribution<Index> bucket(0, e - 1);
    std::bernoulli_distribution coin(0.5);
    for (std::size_t i = 0; i < p.h.size(); ++i) {
        p.h[i] = bucket(rng);
        p.s[i] = coin(rng) ? 1 : -1;
    }
    return p;
}

SketchBank SketchBank::draw(Index input_length, Index e, std::uint64_t seed, bool shared)
{
    std::mt19937_64 rng(seed);
    SketchBank bank;
    bank.shared = shared;
    bank.first = SketchParams::draw(input_length, e, rng);
    bank.second = shared ? bank.first : SketchParams::draw(input_length, e, rng);
    return bank;
}

std::vector<std::pair<Index, Index>> teacher_pairs(Index n_teachers)
{
    std::vector<std::pair<Index, Index>> pairs;
    for (Index m = 0; m < n_teachers; ++m)
        for (Index n = m + 1; n < n_teachers; ++n) pairs.emplace_back(m, n);
    return pairs;
}

std::vector<BilinearVertex> build_vertices(std::span<const Vector> features, const SketchBank& bank)
{
    if (features.size() < 2) throw std::invalid_argument("representation graph needs at least two teachers");
    std::vector<BilinearVertex> out;
    Index k = 0;
    for (auto [m, n] : teacher_pairs(static_cast<Index>(features.size()))) {
        BilinearVertex v;
        v.k = k++;
        v.first = m;
        v.second = n;
        v.v = l2_normalize(signed_sqrt(compact_bilinear(features[static_cast<std::size_t>(m)],
                                                        features[static_cast<std::size_t>(n)], bank.first, bank.second)));
        out.push_back(std::move(v));
    }
    return out;
}

} // namespace gkd

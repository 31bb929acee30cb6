#include "core/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "core/rng.hpp"
#include "json.hpp"

namespace tab {

namespace {

constexpr int kGlyphSize = 28;
constexpr uint32_t kGroupSentinel = 0xFFFFFFFFu;

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

// ---------------------------------------------------------------------------
// Procedural digit glyphs: ten fixed templates derived from the dataset seed
// (a coarse random field upsampled bilinearly), plus per-sample shift,
// intensity scale, and pixel noise. Classes are separable by shape but not
// trivially so; channel color stays the much easier feature.
// ---------------------------------------------------------------------------
class GlyphSynth {
public:
    explicit GlyphSynth(uint64_t seed) {
        Rng rng(derive_seed(seed, 0x67a9));
        constexpr int coarse = 7;
        for (auto& tmpl : templates_) {
            std::array<float, coarse * coarse> field{};
            for (auto& v : field) v = static_cast<float>(rng.uniform());
            tmpl.resize(kGlyphSize * kGlyphSize);
            const float scale = static_cast<float>(coarse - 1) / (kGlyphSize - 1);
            for (int y = 0; y < kGlyphSize; ++y) {
                for (int x = 0; x < kGlyphSize; ++x) {
                    const float fy = y * scale;
                    const float fx = x * scale;
                    const int y0 = static_cast<int>(fy);
                    const int x0 = static_cast<int>(fx);
                    const int y1 = std::min(y0 + 1, coarse - 1);
                    const int x1 = std::min(x0 + 1, coarse - 1);
                    const float wy = fy - y0;
                    const float wx = fx - x0;
                    const float v = (1 - wy) * ((1 - wx) * field[y0 * coarse + x0] +
                                                wx * field[y0 * coarse + x1]) +
                                    wy * ((1 - wx) * field[y1 * coarse + x0] +
                                          wx * field[y1 * coarse + x1]);
                    // contrast stretch, clamped to [0,1]
                    tmpl[y * kGlyphSize + x] =
                        std::clamp(1.6f * (v - 0.5f) + 0.5f, 0.0f, 1.0f);
                }
            }
        }
    }

    std::vector<float> make(int digit, Rng& rng) const {
        const auto& tmpl = templates_[digit];
        const int dx = static_cast<int>(rng.index(7)) - 3;
        const int dy = static_cast<int>(rng.index(7)) - 3;
        const float gain = static_cast<float>(rng.uniform(0.75, 1.0));
        std::vector<float> out(kGlyphSize * kGlyphSize, 0.0f);
        for (int y = 0; y < kGlyphSize; ++y) {
            const int sy = y - dy;
            if (sy < 0 || sy >= kGlyphSize) continue;
            for (int x = 0; x < kGlyphSize; ++x) {
                const int sx = x - dx;
                if (sx < 0 || sx >= kGlyphSize) continue;
                out[y * kGlyphSize + x] = gain * tmpl[sy * kGlyphSize + sx];
            }
        }
        for (auto& v : out) {
            v = std::clamp(v + static_cast<float>(rng.uniform(-0.10, 0.10)), 0.0f, 1.0f);
        }
        return out;
    }

private:
    std::array<std::vector<float>, 10> templates_;
};

// Supplies (pixels, digit) pairs either from a fixed pool or procedurally.
class DigitSupply {
public:
    DigitSupply(const RawDigits* source, uint64_t seed)
        : source_(source), synth_(seed), rng_(derive_seed(seed, 0x5157)) {
        if (source_) {
            if (source_->size() == 0) fail("digit source is empty");
            order_.resize(source_->size());
            std::iota(order_.begin(), order_.end(), size_t{0});
            rng_.shuffle(order_);
        }
    }

    int height() const { return source_ ? source_->height : kGlyphSize; }
    int width() const { return source_ ? source_->width : kGlyphSize; }

    // Next digit of any identity.
    std::pair<std::vector<float>, int> next() {
        if (!source_) {
            const int digit = static_cast<int>(rng_.index(10));
            return {synth_.make(digit, rng_), digit};
        }
        const size_t i = take_next([](int) { return true; });
        return {source_->pixels[i], source_->labels[i]};
    }

    // Next digit whose identity satisfies the predicate (used for the
    // group-balanced test split).
    template <typename Pred>
    std::pair<std::vector<float>, int> next_matching(Pred pred) {
        if (!source_) {
            int digit = static_cast<int>(rng_.index(10));
            while (!pred(digit)) digit = static_cast<int>(rng_.index(10));
            return {synth_.make(digit, rng_), digit};
        }
        const size_t i = take_next(pred);
        return {source_->pixels[i], source_->labels[i]};
    }

private:
    template <typename Pred>
    size_t take_next(Pred pred) {
        for (size_t j = cursor_; j < order_.size(); ++j) {
            const size_t i = order_[j];
            if (pred(source_->labels[i])) {
                std::swap(order_[j], order_[cursor_]);
                return order_[cursor_++];
            }
        }
        fail("requested size exceeds available source pool");
    }

    const RawDigits* source_;
    GlyphSynth synth_;
    Rng rng_;
    std::vector<size_t> order_;
    size_t cursor_ = 0;
};

using Color = std::array<float, 3>;

SampleRef colorize(const std::vector<float>& gray, int h, int w, const Color& rgb) {
    auto out = std::make_shared<SampleData>(static_cast<size_t>(3) * h * w);
    const size_t hw = static_cast<size_t>(h) * w;
    for (int c = 0; c < 3; ++c) {
        for (size_t i = 0; i < hw; ++i) (*out)[c * hw + i] = gray[i] * rgb[c];
    }
    return out;
}

// Assigns exactly round(p * class_size) aligned attributes per class; the
// rest get a misaligned attribute (the other color for A=2, otherwise drawn
// uniformly from the remaining A-1).
LabeledDataset build_biased_split(DigitSupply& supply, size_t n, double p, int num_classes,
                                  const std::vector<Color>& colors, bool parity_task,
                                  Rng& rng, const std::string& split_tag,
                                  const std::string& meta) {
    const int attrs = static_cast<int>(colors.size());
    std::vector<std::vector<float>> gray(n);
    std::vector<int> labels(n);
    std::vector<std::vector<size_t>> by_class(num_classes);
    for (size_t i = 0; i < n; ++i) {
        auto [pix, digit] = supply.next();
        gray[i] = std::move(pix);
        labels[i] = parity_task ? (digit % 2 == 1 ? 0 : 1) : digit;
        by_class[labels[i]].push_back(i);
    }

    std::vector<int> attr(n, 0);
    for (int l = 0; l < num_classes; ++l) {
        auto& idx = by_class[l];
        rng.shuffle(idx);
        const size_t n_aligned =
            static_cast<size_t>(std::llround(p * static_cast<double>(idx.size())));
        for (size_t j = 0; j < idx.size(); ++j) {
            if (j < n_aligned) {
                attr[idx[j]] = l;
            } else if (attrs == 2) {
                attr[idx[j]] = 1 - l;
            } else {
                int a = static_cast<int>(rng.index(attrs - 1));
                if (a >= l) ++a;
                attr[idx[j]] = a;
            }
        }
    }

    LabeledDataset ds;
    ds.channels = 3;
    ds.height = supply.height();
    ds.width = supply.width();
    ds.num_classes = num_classes;
    ds.num_groups = num_classes * attrs;
    ds.split_tag = split_tag;
    ds.meta = meta;
    ds.features.reserve(n);
    ds.labels = labels;
    ds.groups.resize(n);
    for (size_t i = 0; i < n; ++i) {
        ds.features.push_back(colorize(gray[i], ds.height, ds.width, colors[attr[i]]));
        ds.groups[i] = labels[i] * attrs + attr[i];
    }
    ds.validate();
    return ds;
}

// Group-balanced test split: exactly `per_group` samples for every
// (class, color) pair.
LabeledDataset build_balanced_split(DigitSupply& supply, size_t per_group, int num_classes,
                                    const std::vector<Color>& colors, bool parity_task,
                                    const std::string& meta) {
    const int attrs = static_cast<int>(colors.size());
    LabeledDataset ds;
    ds.channels = 3;
    ds.height = supply.height();
    ds.width = supply.width();
    ds.num_classes = num_classes;
    ds.num_groups = num_classes * attrs;
    ds.split_tag = "test";
    ds.meta = meta;
    for (int l = 0; l < num_classes; ++l) {
        auto wants_class = [&](int digit) {
            return parity_task ? ((digit % 2 == 1 ? 0 : 1) == l) : (digit == l);
        };
        for (int a = 0; a < attrs; ++a) {
            for (size_t m = 0; m < per_group; ++m) {
                auto [pix, digit] = supply.next_matching(wants_class);
                (void)digit;
                ds.features.push_back(colorize(pix, ds.height, ds.width, colors[a]));
                ds.labels.push_back(l);
                ds.groups.push_back(l * attrs + a);
            }
        }
    }
    ds.validate();
    return ds;
}

GenResult generate(size_t n_train, size_t n_val, double p, uint64_t seed,
                   const RawDigits* source, bool parity_task) {
    if (p < 0.5 || p > 1.0) fail("correlation strength p must lie in [0.5, 1]");
    if (n_train == 0 || n_val == 0) fail("split sizes must be positive");
    if (source) {
        std::array<bool, 10> seen{};
        for (int d : source->labels) seen[d] = true;
        for (int d = 0; d < 10; ++d) {
            if (!seen[d]) fail("digit source is missing class " + std::to_string(d));
        }
    }

    const int num_classes = parity_task ? 2 : 10;
    std::vector<Color> colors;
    if (parity_task) {
        colors = {Color{1.0f, 0.0f, 0.0f}, Color{0.0f, 1.0f, 0.0f}};  // red, green
    } else {
        Rng crng(derive_seed(seed, 0xc01a));
        for (int i = 0; i < 10; ++i) {
            Color c{};
            float mx = 0.0f;
            for (auto& ch : c) {
                ch = static_cast<float>(crng.uniform());
                mx = std::max(mx, ch);
            }
            for (auto& ch : c) ch /= std::max(mx, 1e-6f);  // full-brightness hues
            colors.push_back(c);
        }
    }

    nlohmann::json meta;
    meta["generator"] = parity_task ? "even_odd" : "cmnist";
    meta["p"] = p;
    meta["seed"] = seed;
    meta["source"] = source ? "idx" : "procedural";
    if (!parity_task) {
        auto arr = nlohmann::json::array();
        for (const auto& c : colors) arr.push_back({c[0], c[1], c[2]});
        meta["colors"] = arr;
    }
    const std::string meta_str = meta.dump();

    DigitSupply supply(source, seed);
    const int k = num_classes * static_cast<int>(colors.size());
    const size_t per_group = std::max<size_t>(1, n_val / static_cast<size_t>(k));

    GenResult out;
    Rng train_rng(derive_seed(seed, 0x7a01));
    Rng val_rng(derive_seed(seed, 0x7a02));
    out.train = build_biased_split(supply, n_train, p, num_classes, colors, parity_task,
                                   train_rng, "train", meta_str);
    out.val = build_biased_split(supply, n_val, p, num_classes, colors, parity_task,
                                 val_rng, "val", meta_str);
    out.test = build_balanced_split(supply, per_group, num_classes, colors, parity_task,
                                    meta_str);
    return out;
}

uint32_t read_be_u32(std::istream& in, const std::string& what) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) fail("truncated IDX file: " + what);
    return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) |
           uint32_t(b[3]);
}

template <typename T>
void write_raw(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::istream& in, const std::string& what) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
        fail("payload shorter than header claims: " + what);
    }
    return v;
}

}  // namespace

void LabeledDataset::validate() const {
    if (channels <= 0 || height <= 0 || width <= 0) fail("dataset has empty shape");
    if (num_classes <= 0) fail("dataset has no classes");
    if (labels.size() != features.size()) fail("label count does not match sample count");
    if (!groups.empty() && groups.size() != features.size()) {
        fail("group count does not match sample count");
    }
    const size_t want = sample_values();
    for (size_t i = 0; i < features.size(); ++i) {
        if (!features[i] || features[i]->size() != want) {
            fail("sample " + std::to_string(i) + " has wrong shape");
        }
        if (labels[i] < 0 || labels[i] >= num_classes) {
            fail("label out of range at sample " + std::to_string(i));
        }
        if (!groups.empty() && (groups[i] < 0 || groups[i] >= num_groups)) {
            fail("group id out of range at sample " + std::to_string(i));
        }
    }
}

RawDigits import_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) fail("cannot open IDX images file: " + images_path);
    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) fail("cannot open IDX labels file: " + labels_path);

    if (read_be_u32(img, "images magic") != 0x00000803u) {
        fail("bad magic in IDX images file");
    }
    const uint32_t n_img = read_be_u32(img, "image count");
    const uint32_t rows = read_be_u32(img, "rows");
    const uint32_t cols = read_be_u32(img, "cols");

    if (read_be_u32(lab, "labels magic") != 0x00000801u) {
        fail("bad magic in IDX labels file");
    }
    const uint32_t n_lab = read_be_u32(lab, "label count");
    if (n_img != n_lab) fail("IDX image/label count mismatch");

    RawDigits out;
    out.height = static_cast<int>(rows);
    out.width = static_cast<int>(cols);
    out.pixels.resize(n_img);
    out.labels.resize(n_img);
    std::vector<unsigned char> buf(static_cast<size_t>(rows) * cols);
    for (uint32_t i = 0; i < n_img; ++i) {
        if (!img.read(reinterpret_cast<char*>(buf.data()), buf.size())) {
            fail("truncated IDX images payload");
        }
        auto& px = out.pixels[i];
        px.resize(buf.size());
        for (size_t j = 0; j < buf.size(); ++j) px[j] = buf[j] / 255.0f;
        unsigned char l = 0;
        if (!lab.read(reinterpret_cast<char*>(&l), 1)) fail("truncated IDX labels payload");
        if (l > 9) fail("IDX label out of range");
        out.labels[i] = l;
    }
    return out;
}

GenResult gen_even_odd(size_t n_train, size_t n_val, double p, uint64_t seed,
                       const RawDigits* source) {
    return generate(n_train, n_val, p, seed, source, /*parity_task=*/true);
}

GenResult gen_cmnist(size_t n_train, size_t n_val, double p, uint64_t seed,
                     const RawDigits* source) {
    return generate(n_train, n_val, p, seed, source, /*parity_task=*/false);
}

GroupWeights group_weights(const LabeledDataset& train, const LabeledDataset& eval) {
    if (!train.has_groups() || !eval.has_groups()) fail("group_weights needs group ids");
    if (train.num_groups != eval.num_groups) fail("group space mismatch");
    if (eval.size() == 0) fail("empty eval set");
    const int k = train.num_groups;
    std::vector<double> train_freq(k, 0.0), eval_freq(k, 0.0);
    for (int g : train.groups) train_freq[g] += 1.0 / train.size();
    for (int g : eval.groups) eval_freq[g] += 1.0 / eval.size();

    GroupWeights w;
    w.weight.assign(k, 0.0);
    for (int g = 0; g < k; ++g) {
        if (eval_freq[g] > 0.0 && train_freq[g] > 0.0) {
            w.weight[g] = train_freq[g] / eval_freq[g];
        }
    }
    double total = 0.0;
    for (int g : eval.groups) total += w.weight[g];
    if (total <= 0.0) fail("no eval group is represented in train");
    const double scale = static_cast<double>(eval.size()) / total;
    for (auto& v : w.weight) v *= scale;
    return w;
}

std::vector<int> bias_conflicting_groups(int num_classes, int num_groups) {
    if (num_classes <= 0 || num_groups % num_classes != 0) {
        fail("group space is not class-aligned");
    }
    const int attrs = num_groups / num_classes;
    std::vector<int> bc;
    for (int g = 0; g < num_groups; ++g) {
        if (g % attrs != g / attrs) bc.push_back(g);
    }
    return bc;
}

void write_tabd(const LabeledDataset& ds, const std::string& path) {
    ds.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("cannot open for write: " + path);
    out.write("TABD", 4);
    write_raw(out, uint32_t{1});
    write_raw(out, static_cast<uint64_t>(ds.size()));
    write_raw(out, static_cast<uint32_t>(ds.channels));
    write_raw(out, static_cast<uint32_t>(ds.height));
    write_raw(out, static_cast<uint32_t>(ds.width));
    write_raw(out, static_cast<uint32_t>(ds.num_classes));
    write_raw(out, static_cast<uint32_t>(ds.num_groups));
    for (const auto& s : ds.features) {
        out.write(reinterpret_cast<const char*>(s->data()),
                  static_cast<std::streamsize>(s->size() * sizeof(float)));
    }
    for (int l : ds.labels) write_raw(out, static_cast<uint32_t>(l));
    for (size_t i = 0; i < ds.size(); ++i) {
        write_raw(out, ds.has_groups() ? static_cast<uint32_t>(ds.groups[i])
                                       : kGroupSentinel);
    }
    // split tag travels inside the metadata envelope
    nlohmann::json env;
    env["split"] = ds.split_tag;
    env["meta"] = ds.meta;
    const std::string m = env.dump();
    write_raw(out, static_cast<uint32_t>(m.size()));
    out.write(m.data(), static_cast<std::streamsize>(m.size()));
    if (!out) fail("write failed: " + path);
}

LabeledDataset read_tabd(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("cannot open: " + path);
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, "TABD", 4) != 0) {
        fail("bad magic in TABD file: " + path);
    }
    const auto version = read_raw<uint32_t>(in, "version");
    if (version != 1) fail("unsupported TABD version");
    const auto n = read_raw<uint64_t>(in, "sample count");
    LabeledDataset ds;
    ds.channels = static_cast<int>(read_raw<uint32_t>(in, "channels"));
    ds.height = static_cast<int>(read_raw<uint32_t>(in, "height"));
    ds.width = static_cast<int>(read_raw<uint32_t>(in, "width"));
    ds.num_classes = static_cast<int>(read_raw<uint32_t>(in, "num classes"));
    ds.num_groups = static_cast<int>(read_raw<uint32_t>(in, "num groups"));

    const size_t values = static_cast<size_t>(ds.channels) * ds.height * ds.width;
    ds.features.reserve(n);
    for (uint64_t i = 0; i < n; ++i) {
        auto s = std::make_shared<SampleData>(values);
        if (!in.read(reinterpret_cast<char*>(s->data()),
                     static_cast<std::streamsize>(values * sizeof(float)))) {
            fail("payload shorter than header claims: features");
        }
        ds.features.push_back(std::move(s));
    }
    ds.labels.resize(n);
    for (auto& l : ds.labels) l = static_cast<int>(read_raw<uint32_t>(in, "labels"));
    std::vector<uint32_t> raw_groups(n);
    for (auto& g : raw_groups) g = read_raw<uint32_t>(in, "groups");
    const bool absent = !raw_groups.empty() && raw_groups[0] == kGroupSentinel;
    if (!absent) {
        ds.groups.resize(n);
        for (uint64_t i = 0; i < n; ++i) ds.groups[i] = static_cast<int>(raw_groups[i]);
    } else {
        for (uint32_t g : raw_groups) {
            if (g != kGroupSentinel) fail("mixed group sentinel in TABD file");
        }
    }
    const auto mlen = read_raw<uint32_t>(in, "meta length");
    std::string m(mlen, '\0');
    if (mlen > 0 && !in.read(m.data(), mlen)) {
        fail("payload shorter than header claims: meta");
    }
    const auto env = nlohmann::json::parse(m, nullptr, false);
    if (env.is_discarded()) fail("corrupt TABD metadata");
    ds.split_tag = env.value("split", "");
    ds.meta = env.value("meta", "");
    ds.validate();
    return ds;
}

}  // namespace tab

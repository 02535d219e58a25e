#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "deflectrack/autodiff.hpp"
#include "deflectrack/image.hpp"
#include "deflectrack/vec.hpp"

namespace deflectrack {

/// Screen content. Sinusoid value at normalized coordinate c (u for
/// horizontal, v for vertical): mean + amplitude * cos(2 pi f (c+1)/2 + offset).
struct Pattern {
    enum class Kind { Sinusoid, Image };
    enum class Orientation { Horizontal, Vertical };

    Kind kind = Kind::Sinusoid;
    double frequency = 1.0;  // periods across the screen dimension
    Orientation orientation = Orientation::Horizontal;
    double phase_offset = 0.0;  // radians
    double mean = 0.5;          // A
    double amplitude = 0.5;     // B
    Image image;                // for Kind::Image

    void validate() const {
        if (kind == Kind::Sinusoid && (mean - amplitude < -1e-12 || mean + amplitude > 1 + 1e-12))
            throw std::invalid_argument("sinusoid not displayable: need A-B >= 0 and A+B <= 1");
    }

    static Pattern sinusoid(double freq, Orientation o, double offset = 0.0, double a = 0.5,
                            double b = 0.5) {
        Pattern p;
        p.kind = Kind::Sinusoid;
        p.frequency = freq;
        p.orientation = o;
        p.phase_offset = offset;
        p.mean = a;
        p.amplitude = b;
        p.validate();
        return p;
    }
    static Pattern uniform(double level) { return sinusoid(0.0, Orientation::Horizontal, 0.0, level, 0.0); }
    static Pattern from_image(Image img) {
        Pattern p;
        p.kind = Kind::Image;
        p.image = std::move(img);
        return p;
    }
};

/// Pattern sample, templated so the renderer can differentiate through uv.
/// Image patterns are sampled bilinearly and read as black outside [-1,1]^2.
template <class T>
std::array<T, 3> sample_pattern(const Pattern& p, const Vec2<T>& uv) {
    using std::cos;
    if (p.kind == Pattern::Kind::Sinusoid) {
        const T coord = p.orientation == Pattern::Orientation::Horizontal ? uv.x : uv.y;
        T val = p.mean + p.amplitude * cos(kPi * p.frequency * (coord + 1.0) + p.phase_offset);
        return {val, val, val};
    }
    const double uu = value(uv.x), vv = value(uv.y);
    if (uu < -1.0 || uu > 1.0 || vv < -1.0 || vv > 1.0 || p.image.width < 1 ||
        p.image.height < 1)
        return {T(0.0), T(0.0), T(0.0)};
    const int w = p.image.width, h = p.image.height;
    const T s = (uv.x + 1.0) * (0.5 * (w - 1));
    const T t = (uv.y + 1.0) * (0.5 * (h - 1));
    int x0 = std::clamp(static_cast<int>(std::floor(value(s))), 0, std::max(0, w - 2));
    int y0 = std::clamp(static_cast<int>(std::floor(value(t))), 0, std::max(0, h - 2));
    const T fx = s - static_cast<double>(x0);
    const T fy = t - static_cast<double>(y0);
    const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
    std::array<T, 3> out{T(0.0), T(0.0), T(0.0)};
    for (int c = 0; c < 3; ++c) {
        const int cc = std::min(c, p.image.channels - 1);
        const double i00 = p.image.at(x0, y0, cc), i10 = p.image.at(x1, y0, cc);
        const double i01 = p.image.at(x0, y1, cc), i11 = p.image.at(x1, y1, cc);
        out[c] = (1.0 - fy) * ((1.0 - fx) * i00 + fx * i10) +
                 fy * ((1.0 - fx) * i01 + fx * i11);
    }
    return out;
}

inline Vec3d render_pattern_value(const Pattern& p, const Vec2d& uv) {
    const auto c = sample_pattern<double>(p, uv);
    return {c[0], c[1], c[2]};
}

/// Capture offset sequence for the four-step decoder below: displaying the
/// sinusoid with these offsets makes atan2(I1-I3, I0-I2) return the pattern's
/// own phase term (the k-th capture sees A + B cos(phi - k pi/2)).
inline std::array<double, 4> phase_shift_offsets() {
    return {0.0, -kPi / 2, -kPi, -1.5 * kPi};
}

struct PhaseMaps {
    Image phase;       // wrapped, (-pi, pi]
    Image modulation;  // B-hat, validity measure
};

/// Four-step phase retrieval: phi = atan2(I1 - I3, I0 - I2), modulation
/// B-hat = 0.5 sqrt((I1-I3)^2 + (I0-I2)^2).
inline PhaseMaps four_step_phase(const std::array<const Image*, 4>& caps) {
    const int w = caps[0]->width, h = caps[0]->height;
    for (const Image* c : caps)
        if (c->width != w || c->height != h)
            throw std::invalid_argument("four_step_phase: capture dimensions differ");
    PhaseMaps out{Image(w, h, 1), Image(w, h, 1)};
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double num = caps[1]->intensity(x, y) - caps[3]->intensity(x, y);
            const double den = caps[0]->intensity(x, y) - caps[2]->intensity(x, y);
            out.phase.at(x, y) = static_cast<float>(std::atan2(num, den));
            out.modulation.at(x, y) = static_cast<float>(0.5 * std::hypot(num, den));
        }
    return out;
}

inline PhaseMaps four_step_phase(const std::array<Image, 4>& caps) {
    return four_step_phase(std::array<const Image*, 4>{&caps[0], &caps[1], &caps[2], &caps[3]});
}

namespace detail {
/// Maps an angle difference to its principal value in (-pi, pi].
inline double principal_angle(double d) {
    double m = d - 2.0 * kPi * std::floor((d + kPi) / (2.0 * kPi));
    if (m <= -kPi) m += 2.0 * kPi;
    return m;
}
}  // namespace detail

/// 1D unwrap: first sample kept, later samples shifted by multiples of 2 pi so
/// successive differences lie in (-pi, pi].
inline std::vector<double> unwrap_scanline(std::span<const double> wrapped) {
    std::vector<double> out(wrapped.begin(), wrapped.end());
    for (size_t i = 1; i < out.size(); ++i)
        out[i] = out[i - 1] + detail::principal_angle(out[i] - out[i - 1]);
    return out;
}

// ---------------------------------------------------------------------------
// Correspondences
// ---------------------------------------------------------------------------

/// Camera-pixel to screen-coordinate correspondences. Entries with valid=0
/// are placeholders kept for indexing; consumers must skip them.
struct CorrespondenceSet {
    std::vector<Vec2d> pixels;
    std::vector<Vec2d> screen_uv;
    std::vector<std::uint8_t> valid;

    size_t size() const { return pixels.size(); }
    size_t valid_count() const {
        size_t n = 0;
        for (auto v : valid) n += v ? 1 : 0;
        return n;
    }
    void push(const Vec2d& px, const Vec2d& uv, bool ok = true) {
        pixels.push_back(px);
        screen_uv.push_back(uv);
        valid.push_back(ok ? 1 : 0);
    }
};

struct PhaseAnchor {
    int px = 0, py = 0;
    double coord = -1.0;  // known absolute screen coordinate at that pixel
};

/// Maps absolutely unwrapped phase maps to normalized screen coordinates:
/// u = phi/(2 pi f) * 2 - 1, after fixing the residual global 2 pi offset so
/// the anchor pixel lands on its known coordinate.
inline CorrespondenceSet phase_to_correspondence(const Image& phase_h, const Image& phase_v,
                                                 double f_h, double f_v,
                                                 const std::vector<std::uint8_t>& valid,
                                                 const PhaseAnchor& anchor_h,
                                                 const PhaseAnchor& anchor_v) {
    const int w = phase_h.width, h = phase_h.height;
    if (phase_v.width != w || phase_v.height != h ||
        valid.size() != static_cast<size_t>(w) * h)
        throw std::invalid_argument("phase_to_correspondence: dimension mismatch");
    auto offset_for = [&](const Image& phase, double f, const PhaseAnchor& a) {
        if (a.px < 0 || a.px >= w || a.py < 0 || a.py >= h ||
            !valid[static_cast<size_t>(a.py) * w + a.px])
            throw std::invalid_argument("phase anchor outside the valid mask");
        const double want = kPi * f * (a.coord + 1.0);
        const double have = phase.at(a.px, a.py);
        return 2.0 * kPi * std::round((want - have) / (2.0 * kPi));
    };
    const double off_h = offset_for(phase_h, f_h, anchor_h);
    const double off_v = offset_for(phase_v, f_v, anchor_v);
    CorrespondenceSet set;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!valid[static_cast<size_t>(y) * w + x]) continue;
            const double u = (phase_h.at(x, y) + off_h) / (kPi * f_h) - 1.0;
            const double v = (phase_v.at(x, y) + off_v) / (kPi * f_v) - 1.0;
            set.push({x + 0.5, y + 0.5}, {u, v});
        }
    return set;
}

// ---------------------------------------------------------------------------
// Full decode pipeline: wrapped fine phase + unit-frequency coarse phase ->
// absolute phase. Scanlines (rows for horizontal, columns for vertical) are
// split into contiguous valid runs (also split where the coarse coordinate
// jumps, e.g. across the limbus crease), each run is unwrapped outward from
// its maximum-modulation pixel, and the run's global 2 pi offset comes from
// the median coarse-phase prediction (or from a reference coordinate buffer
// when anchoring against the renderer's known UV).
// ---------------------------------------------------------------------------

struct DecodeConfig {
    double modulation_threshold = 0.05;  // absolute, intensities in [0,1]
    double coarse_jump_split = 0.12;     // normalized screen units
    enum class Anchor { CoarsePhase, KnownUv } anchor = Anchor::CoarsePhase;
};

namespace detail {

inline double mod_2pi(double x) {
    double m = std::fmod(x, 2.0 * kPi);
    if (m < 0) m += 2.0 * kPi;
    return m;
}

/// Unwraps `vals` in place outward from seed_idx (both directions).
inline void unwrap_from_seed(std::vector<double>& vals, size_t seed_idx) {
    for (size_t i = seed_idx + 1; i < vals.size(); ++i)
        vals[i] = vals[i - 1] + principal_angle(vals[i] - vals[i - 1]);
    for (size_t i = seed_idx; i-- > 0;)
        vals[i] = vals[i + 1] + principal_angle(vals[i] - vals[i + 1]);
}

}  // namespace detail

/// Produces the absolutely unwrapped phase map for one orientation.
/// `coarse` must be the unit-frequency phase of the same orientation (may be
/// the fine map itself when the fine frequency is 1). If `reference_coord`
/// is given (simulation anchor), each run is anchored from the renderer's
/// known coordinate at the run's best pixel instead of the coarse median.
inline Image unwrap_absolute(const PhaseMaps& fine, const PhaseMaps& coarse, double freq,
                             bool horizontal, const std::vector<std::uint8_t>& mask,
                             const DecodeConfig& cfg,
                             const std::vector<double>* reference_coord = nullptr,
                             std::vector<std::uint8_t>* out_valid = nullptr) {
    const int w = fine.phase.width, h = fine.phase.height;
    Image abs_phase(w, h, 1, 0.f);
    if (out_valid) out_valid->assign(static_cast<size_t>(w) * h, 0);
    const int outer = horizontal ? h : w;
    const int inner = horizontal ? w : h;
    auto idx = [&](int line, int k) {
        const int x = horizontal ? k : line;
        const int y = horizontal ? line : k;
        return std::pair<int, int>{x, y};
    };
    std::vector<double> run_phase;
    std::vector<int> run_pos;
    auto flush_run = [&](int line) {
        if (run_phase.size() == 0) return;
        // seed at the maximum-modulation pixel of the run
        size_t seed = 0;
        double best_mod = -1.0;
        for (size_t i = 0; i < run_pos.size(); ++i) {
            auto [x, y] = idx(line, run_pos[i]);
            const double m = fine.modulation.at(x, y);
            if (m > best_mod) {
                best_mod = m;
                seed = i;
            }
        }
        detail::unwrap_from_seed(run_phase, seed);
        double offset;
        if (reference_coord) {
            auto [x, y] = idx(line, run_pos[seed]);
            const double want = kPi * freq * ((*reference_coord)[static_cast<size_t>(y) * w + x] + 1.0);
            offset = 2.0 * kPi * std::round((want - run_phase[seed]) / (2.0 * kPi));
        } else {
            std::vector<double> ks;
            ks.reserve(run_phase.size());
            for (size_t i = 0; i < run_phase.size(); ++i) {
                auto [x, y] = idx(line, run_pos[i]);
                const double coarse_abs = detail::mod_2pi(coarse.phase.at(x, y));
                ks.push_back((freq * coarse_abs - run_phase[i]) / (2.0 * kPi));
            }
            std::nth_element(ks.begin(), ks.begin() + ks.size() / 2, ks.end());
            offset = 2.0 * kPi * std::round(ks[ks.size() / 2]);
        }
        for (size_t i = 0; i < run_phase.size(); ++i) {
            auto [x, y] = idx(line, run_pos[i]);
            abs_phase.at(x, y) = static_cast<float>(run_phase[i] + offset);
            if (out_valid) (*out_valid)[static_cast<size_t>(y) * w + x] = 1;
        }
        run_phase.clear();
        run_pos.clear();
    };
    for (int line = 0; line < outer; ++line) {
        double prev_coarse = 0.0;
        for (int k = 0; k < inner; ++k) {
            auto [x, y] = idx(line, k);
            const size_t flat = static_cast<size_t>(y) * w + x;
            const bool ok = mask[flat] && fine.modulation.at(x, y) > cfg.modulation_threshold &&
                            coarse.modulation.at(x, y) > cfg.modulation_threshold;
            if (!ok) {
                flush_run(line);
                continue;
            }
            const double cc = reference_coord
                                  ? (*reference_coord)[flat]
                                  : detail::mod_2pi(coarse.phase.at(x, y)) / kPi - 1.0;
            if (!run_phase.empty() && std::fabs(cc - prev_coarse) > cfg.coarse_jump_split)
                flush_run(line);
            run_phase.push_back(fine.phase.at(x, y));
            run_pos.push_back(k);
            prev_coarse = cc;
        }
        flush_run(line);
    }
    return abs_phase;
}

struct DecodeResult {
    CorrespondenceSet set;
    std::vector<std::uint8_t> valid;
    Image phase_h, phase_v;  // absolute unwrapped maps
};

inline DecodeResult decode_phase_shift_captures(
    const std::array<Image, 4>& fine_h, const std::array<Image, 4>& fine_v,
    const std::array<Image, 4>& coarse_h, const std::array<Image, 4>& coarse_v, double f_h,
    double f_v, const std::vector<std::uint8_t>& eye_mask, const DecodeConfig& cfg,
    const std::vector<double>* ref_u = nullptr, const std::vector<double>* ref_v = nullptr) {
    const PhaseMaps ph_f = four_step_phase(fine_h);
    const PhaseMaps pv_f = four_step_phase(fine_v);
    const PhaseMaps ph_c = four_step_phase(coarse_h);
    const PhaseMaps pv_c = four_step_phase(coarse_v);
    const bool known_uv = cfg.anchor == DecodeConfig::Anchor::KnownUv;
    if (known_uv && (!ref_u || !ref_v))
        throw std::invalid_argument("known-uv anchoring requires reference buffers");
    std::vector<std::uint8_t> valid_h, valid_v;
    DecodeResult out;
    out.phase_h = unwrap_absolute(ph_f, ph_c, f_h, /*horizontal=*/true, eye_mask, cfg,
                                  known_uv ? ref_u : nullptr, &valid_h);
    out.phase_v = unwrap_absolute(pv_f, pv_c, f_v, /*horizontal=*/false, eye_mask, cfg,
                                  known_uv ? ref_v : nullptr, &valid_v);
    const int w = out.phase_h.width, h = out.phase_h.height;
    out.valid.assign(static_cast<size_t>(w) * h, 0);
    for (size_t i = 0; i < out.valid.size(); ++i) out.valid[i] = valid_h[i] && valid_v[i];
    // the maps are already absolute; anchor through the best valid pixel
    int ax = -1, ay = -1;
    double best = -1.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (out.valid[static_cast<size_t>(y) * w + x] &&
                ph_f.modulation.at(x, y) > best) {
                best = ph_f.modulation.at(x, y);
                ax = x;
                ay = y;
            }
    if (ax < 0) throw std::runtime_error("decode produced no valid pixels");
    const PhaseAnchor ah{ax, ay, out.phase_h.at(ax, ay) / (kPi * f_h) - 1.0};
    const PhaseAnchor av{ax, ay, out.phase_v.at(ax, ay) / (kPi * f_v) - 1.0};
    out.set = phase_to_correspondence(out.phase_h, out.phase_v, f_h, f_v, out.valid, ah, av);
    return out;
}

// ---------------------------------------------------------------------------
// External correspondence import / export (CSV: px,py,u,v with header).
// ---------------------------------------------------------------------------

inline void save_correspondences_csv(const std::string& path, const CorrespondenceSet& set) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "px,py,u,v\n";
    for (size_t i = 0; i < set.size(); ++i) {
        if (!set.valid[i]) continue;
        char buf[128];
        std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%.9g,%.9g\n", set.pixels[i].x,
                      set.pixels[i].y, set.screen_uv[i].x, set.screen_uv[i].y);
        out << buf;
    }
}

/// Parses a correspondence CSV. Rows with |u| or |v| > 1.5 are rejected with a
/// warning (collected in `warnings` when given, otherwise sent to stderr).
inline CorrespondenceSet load_external_correspondences(
    const std::string& path, std::vector<std::string>* warnings = nullptr) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    auto warn = [&](const std::string& msg) {
        if (warnings)
            warnings->push_back(msg);
        else
            std::cerr << "warning: " << msg << "\n";
    };
    std::string line;
    if (!std::getline(in, line)) return {};  // empty file -> empty set
    // header row required
    std::string trimmed;
    for (char c : line)
        if (!std::isspace(static_cast<unsigned char>(c))) trimmed += c;
    if (trimmed != "px,py,u,v")
        throw std::runtime_error(path + ":1: expected header 'px,py,u,v'");
    CorrespondenceSet set;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        double vals[4];
        char comma;
        bool ok = true;
        for (int k = 0; k < 4 && ok; ++k) {
            if (!(ss >> vals[k])) ok = false;
            if (k < 3 && ok && !(ss >> comma && comma == ',')) ok = false;
        }
        if (!ok)
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": malformed row '" +
                                     line + "'");
        if (std::fabs(vals[2]) > 1.5 || std::fabs(vals[3]) > 1.5) {
            warn(path + ":" + std::to_string(lineno) + ": screen coordinate out of range, row rejected");
            continue;
        }
        set.push({vals[0], vals[1]}, {vals[2], vals[3]});
    }
    return set;
}

}  // namespace deflectrack

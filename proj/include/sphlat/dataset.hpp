#pragma once

// Procedurally generated toy images: anti-aliased ellipses and bars with
// random pose plus pixel noise. Regeneration from (spec, seed) is exact, so
// datasets need no storage beyond their spec.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "sphlat/rng.hpp"
#include "sphlat/tensor.hpp"

namespace sphlat {

struct DatasetSpec {
    int n_items = 512;
    int height = 8;
    int width = 8;
    double noise = 0.02;
    std::uint64_t seed = 0;
};

struct ToyItem {
    Vec pixels;  // height * width, row-major, values in [0, ~1]
    int label;   // 0 = ellipse, 1 = bar
};

struct ToyDataset {
    DatasetSpec spec;
    std::vector<ToyItem> items;
};

namespace detail {

// Smooth coverage from a signed distance, ~1 pixel of anti-aliasing.
inline double coverage(double sdf) {
    const double t = 0.5 - sdf;
    return t <= 0.0 ? 0.0 : (t >= 1.0 ? 1.0 : t);
}

}  // namespace detail

inline ToyItem render_item(int h, int w, double noise, RngStream& rng) {
    ToyItem item;
    item.pixels.assign(static_cast<std::size_t>(h * w), 0.0);
    item.label = rng.uniform() < 0.5 ? 0 : 1;
    const double cx = rng.uniform_range(0.3, 0.7) * w;
    const double cy = rng.uniform_range(0.3, 0.7) * h;
    const double angle = rng.uniform_range(0.0, std::numbers::pi);
    const double ca = std::cos(angle), sa = std::sin(angle);
    const double intensity = rng.uniform_range(0.6, 1.0);
    const double a = rng.uniform_range(0.18, 0.38) * w;  // major half-extent
    const double b = (item.label == 0) ? rng.uniform_range(0.12, 0.3) * h
                                       : rng.uniform_range(0.05, 0.1) * h;  // bars are thin
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double px = (x + 0.5) - cx;
            const double py = (y + 0.5) - cy;
            const double u = ca * px + sa * py;
            const double v = -sa * px + ca * py;
            double sdf;
            if (item.label == 0) {
                const double q = std::sqrt((u / a) * (u / a) + (v / b) * (v / b));
                sdf = (q - 1.0) * std::min(a, b);
            } else {
                sdf = std::max(std::fabs(u) - a, std::fabs(v) - b);
            }
            double val = intensity * detail::coverage(sdf);
            val += noise * rng.normal();
            item.pixels[static_cast<std::size_t>(y * w + x)] = val;
        }
    }
    return item;
}

inline ToyDataset generate_dataset(const DatasetSpec& spec) {
    ToyDataset ds;
    ds.spec = spec;
    ds.items.reserve(static_cast<std::size_t>(spec.n_items));
    RngStream rng(spec.seed, 0xDA7A);
    for (int i = 0; i < spec.n_items; ++i)
        ds.items.push_back(render_item(spec.height, spec.width, spec.noise, rng));
    return ds;
}

// Row-major p x p patches of one image in raster order.
inline std::vector<Vec> extract_patches(const Vec& pixels, int h, int w, int patch) {
    std::vector<Vec> out;
    for (int py = 0; py + patch <= h; py += patch)
        for (int px = 0; px + patch <= w; px += patch) {
            Vec patch_pixels(static_cast<std::size_t>(patch * patch));
            for (int y = 0; y < patch; ++y)
                for (int x = 0; x < patch; ++x)
                    patch_pixels[static_cast<std::size_t>(y * patch + x)] =
                        pixels[static_cast<std::size_t>((py + y) * w + (px + x))];
            out.push_back(std::move(patch_pixels));
        }
    return out;
}

inline void place_patch(Vec& pixels, int h, int w, int patch, int index, const Vec& patch_pixels) {
    const int cols = w / patch;
    const int py = (index / cols) * patch;
    const int px = (index % cols) * patch;
    (void)h;
    for (int y = 0; y < patch; ++y)
        for (int x = 0; x < patch; ++x)
            pixels[static_cast<std::size_t>((py + y) * w + (px + x))] =
                patch_pixels[static_cast<std::size_t>(y * patch + x)];
}

// Mean pixel value over the dataset; the mean-predictor reconstruction
// baseline for training sanity checks.
inline double mean_predictor_mse(const ToyDataset& ds) {
    double mean = 0.0;
    std::size_t n = 0;
    for (const auto& item : ds.items)
        for (double v : item.pixels) {
            mean += v;
            ++n;
        }
    mean /= static_cast<double>(n);
    double mse = 0.0;
    for (const auto& item : ds.items)
        for (double v : item.pixels) mse += (v - mean) * (v - mean);
    return mse / static_cast<double>(n);
}

// FNV-1a over the raw pixel bytes; manifest checksum.
inline std::uint64_t dataset_checksum(const ToyDataset& ds) {
    std::uint64_t hash = 1469598103934665603ULL;
    auto mix = [&](const void* data, std::size_t len) {
        const unsigned char* b = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < len; ++i) {
            hash ^= b[i];
            hash *= 1099511628211ULL;
        }
    };
    for (const auto& item : ds.items) {
        mix(item.pixels.data(), item.pixels.size() * sizeof(double));
        mix(&item.label, sizeof(item.label));
    }
    return hash;
}

}  // namespace sphlat

#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "fss.hpp"

namespace fss::test {

inline LabelMask random_mask(Rng& rng, int h, int w, int n_classes, double ignore_prob = 0.0,
                             ClassId ignore = kDefaultIgnoreId) {
    LabelMask m(h, w, 0);
    for (auto& v : m.data())
        v = uniform01(rng) < ignore_prob ? ignore : static_cast<ClassId>(uniform_index(rng, n_classes));
    return m;
}

inline Image random_image(Rng& rng, int h, int w, int c = 3) {
    Image img(h, w, c);
    for (auto& v : img.data()) v = static_cast<float>(uniform01(rng));
    return img;
}

template <typename T>
SegModel<T> tiny_model(Method m, int n_classes, std::uint64_t seed = 1, TinyEncoderConfig cfg = {}) {
    return make_model<T>(std::make_unique<TinyEncoder<T>>(cfg), m, ClassCatalog::numbered(n_classes, true), seed);
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("fss_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace fss::test

#pragma once

// Minimal PNM image input: binary PPM (P6) and PGM (P5) with 8-bit samples.

#include <cctype>
#include <fstream>
#include <string>
#include <vector>

#include "lwplg/tensor.hpp"

namespace lwplg {

struct Image {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<float> data;  // (c, h, w) row-major, values in [0, 1]
};

namespace detail {

inline int pnm_next_int(std::istream& is) {
    // skips whitespace and '#' comment lines between header tokens
    int c = is.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = is.get();
        } else if (!std::isspace(c)) {
            break;
        }
        c = is.get();
    }
    require(c != EOF && std::isdigit(c), "pnm: malformed header");
    int value = 0;
    while (c != EOF && std::isdigit(c)) {
        value = value * 10 + (c - '0');
        c = is.get();
    }
    return value;
}

}  // namespace detail

inline Image load_pnm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    require(is.good(), "load_pnm: cannot open '" + path + "'");
    char magic[2];
    is.read(magic, 2);
    require(is.good() && magic[0] == 'P' && (magic[1] == '5' || magic[1] == '6'),
            "load_pnm: '" + path + "' is not a binary PGM (P5) or PPM (P6) file");
    const int channels = magic[1] == '6' ? 3 : 1;
    const int width = detail::pnm_next_int(is);
    const int height = detail::pnm_next_int(is);
    const int maxval = detail::pnm_next_int(is);
    require(width >= 1 && height >= 1, "load_pnm: bad dimensions");
    require(maxval > 0 && maxval <= 255, "load_pnm: only 8-bit samples supported, maxval=" +
                                             std::to_string(maxval));
    const size_t count = static_cast<size_t>(width) * static_cast<size_t>(height) *
                         static_cast<size_t>(channels);
    std::vector<unsigned char> raw(count);
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(count));
    require(is.gcount() == static_cast<std::streamsize>(count), "load_pnm: truncated pixel data");

    Image img;
    img.width = width;
    img.height = height;
    img.channels = channels;
    img.data.resize(count);
    // interleaved -> planar
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            for (int c = 0; c < channels; ++c)
                img.data[static_cast<size_t>((c * height + y) * width + x)] =
                    static_cast<float>(raw[static_cast<size_t>((y * width + x) * channels + c)]) /
                    static_cast<float>(maxval);
    return img;
}

// (1, 3, h, w) tensor in [0,1]; grayscale input is replicated across channels.
inline Tensor4<float> image_to_tensor(const Image& img) {
    Tensor4<float> t = Tensor4<float>::zeros({1, 3, img.height, img.width});
    const int64_t plane = static_cast<int64_t>(img.height) * img.width;
    for (int c = 0; c < 3; ++c) {
        const int src = img.channels == 3 ? c : 0;
        for (int64_t i = 0; i < plane; ++i)
            t.data()[c * plane + i] = img.data[static_cast<size_t>(src * plane + i)];
    }
    return t;
}

inline void save_ppm(const std::string& path, const Image& img) {
    require(img.channels == 3, "save_ppm: expected 3 channels");
    std::ofstream os(path, std::ios::binary);
    require(os.good(), "save_ppm: cannot open '" + path + "'");
    os << "P6\n" << img.width << " " << img.height << "\n255\n";
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) {
                float v = img.data[static_cast<size_t>((c * img.height + y) * img.width + x)];
                v = std::min(std::max(v, 0.0f), 1.0f);
                os.put(static_cast<char>(static_cast<int>(v * 255.0f + 0.5f)));
            }
}

}  // namespace lwplg

#include "mm/cube.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "mm/error.hpp"
#include "mm/rng.hpp"

namespace mm {

namespace {

void write_f32_le(std::ostream& os, float v) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    char b[4] = {char(u & 0xff), char((u >> 8) & 0xff), char((u >> 16) & 0xff), char((u >> 24) & 0xff)};
    os.write(b, 4);
}

void write_u16_le(std::ostream& os, std::uint16_t v) {
    char b[2] = {char(v & 0xff), char((v >> 8) & 0xff)};
    os.write(b, 2);
}

float read_f32_le(const unsigned char* p) {
    std::uint32_t u = std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
                      std::uint32_t(p[3]) << 24;
    float v;
    std::memcpy(&v, &u, 4);
    return v;
}

std::uint16_t read_u16_le(const unsigned char* p) {
    return std::uint16_t(std::uint16_t(p[0]) | std::uint16_t(p[1]) << 8);
}

nlohmann::json read_header_line(std::istream& is, const std::string& path) {
    std::string line;
    if (!std::getline(is, line)) {
        fail(ErrCode::format, path + ": missing header line");
    }
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        fail(ErrCode::format, path + ": header is not a JSON object");
    }
    return j;
}

std::vector<unsigned char> read_payload(std::istream& is) {
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                     std::istreambuf_iterator<char>());
    return bytes;
}

// near-equal row/col partition of `total` into `parts` bands
std::vector<std::size_t> partition_edges(std::size_t total, std::size_t parts) {
    std::vector<std::size_t> edges(parts + 1);
    for (std::size_t i = 0; i <= parts; ++i) {
        edges[i] = (total * i) / parts;
    }
    return edges;
}

} // namespace

std::size_t HsiCube::labeled_count() const {
    std::size_t n = 0;
    for (auto l : labels) {
        if (l != 0) {
            ++n;
        }
    }
    return n;
}

void HsiCube::validate() const {
    if (reflectance.size() != height * width * bands) {
        fail(ErrCode::shape, "cube: reflectance size does not match dimensions");
    }
    if (labels.size() != height * width) {
        fail(ErrCode::shape, "cube: label map size does not match dimensions");
    }
    std::vector<bool> seen(std::size_t(class_count) + 1, false);
    for (auto l : labels) {
        if (l > class_count) {
            fail(ErrCode::format, "cube: label " + std::to_string(l) + " exceeds declared class count " +
                                      std::to_string(class_count));
        }
        seen[l] = true;
    }
    for (int k = 1; k <= class_count; ++k) {
        if (!seen[std::size_t(k)]) {
            fail(ErrCode::format, "cube: declared class " + std::to_string(k) + " has no labeled pixels");
        }
    }
    for (float v : reflectance) {
        if (!std::isfinite(v)) {
            fail(ErrCode::numeric, "cube: non-finite reflectance value");
        }
    }
}

HsiCube synth_cube(const SynthSpec& spec) {
    if (spec.classes < 1 || std::size_t(spec.classes) > spec.height * spec.width) {
        fail(ErrCode::config, "synth_cube: class count infeasible for the given extent");
    }
    if (spec.bands < 4) {
        fail(ErrCode::config, "synth_cube: at least 4 bands required");
    }
    const std::size_t h = spec.height, w = spec.width, c = spec.bands;
    const int k = spec.classes;

    // largest divisor of k not exceeding sqrt(k) -> gr x gc tile grid
    std::size_t gr = 1;
    for (std::size_t d = 1; d * d <= std::size_t(k); ++d) {
        if (std::size_t(k) % d == 0) {
            gr = d;
        }
    }
    const std::size_t gc = std::size_t(k) / gr;
    const auto row_edges = partition_edges(h, gr);
    const auto col_edges = partition_edges(w, gc);

    Rng rng(spec.seed);

    // per-class smooth signature: two Gaussians over the band index, the first
    // evenly spaced across the spectrum, the second offset by half of it
    struct Sig {
        double mu1, s1, a1, mu2, s2, a2, base;
    };
    std::vector<Sig> sigs(static_cast<std::size_t>(k));
    for (int cls = 0; cls < k; ++cls) {
        Sig s;
        const double cd = double(c);
        s.mu1 = cd * (cls + 0.5) / double(k) + rng.uniform(-0.03, 0.03) * cd;
        s.s1 = cd / (2.5 * double(k)) + rng.uniform(0.0, 0.05) * cd;
        s.a1 = 1.6 + rng.uniform(-0.1, 0.1);
        s.mu2 = std::fmod(cd * (cls + 0.5) / double(k) + 0.5 * cd, cd);
        s.s2 = cd / 7.0 + rng.uniform(0.0, 0.05) * cd;
        s.a2 = 0.8 + rng.uniform(-0.1, 0.1);
        s.base = 0.15 * double(cls);
        sigs[std::size_t(cls)] = s;
    }

    HsiCube cube;
    cube.height = h;
    cube.width = w;
    cube.bands = c;
    cube.class_count = k;
    cube.reflectance.assign(h * w * c, 0.0f);
    cube.labels.assign(h * w, 0);
    cube.wavelengths.resize(c);
    for (std::size_t b = 0; b < c; ++b) {
        cube.wavelengths[b] = float(400.0 + (c > 1 ? 600.0 * double(b) / double(c - 1) : 0.0));
    }

    for (std::size_t r = 0; r < h; ++r) {
        // tile row band for this pixel row
        std::size_t tr = 0;
        while (tr + 1 < gr && r >= row_edges[tr + 1]) {
            ++tr;
        }
        for (std::size_t cc = 0; cc < w; ++cc) {
            std::size_t tc = 0;
            while (tc + 1 < gc && cc >= col_edges[tc + 1]) {
                ++tc;
            }
            const int cls = int(tr * gc + tc) + 1;
            // tile seams (last row/col of each tile) stay unlabeled
            const bool seam = (r + 1 == row_edges[tr + 1]) || (cc + 1 == col_edges[tc + 1]);
            cube.labels[r * w + cc] = seam ? 0 : std::uint16_t(cls);
            const Sig& s = sigs[std::size_t(cls - 1)];
            for (std::size_t b = 0; b < c; ++b) {
                const double bd = double(b);
                double v = s.base;
                v += s.a1 * std::exp(-0.5 * (bd - s.mu1) * (bd - s.mu1) / (s.s1 * s.s1));
                v += s.a2 * std::exp(-0.5 * (bd - s.mu2) * (bd - s.mu2) / (s.s2 * s.s2));
                v += spec.noise_sigma * rng.gaussian();
                cube.at(r, cc, b) = float(v);
            }
        }
    }

    std::vector<std::size_t> counts(std::size_t(k) + 1, 0);
    for (auto l : cube.labels) {
        ++counts[l];
    }
    for (int cls = 1; cls <= k; ++cls) {
        if (counts[std::size_t(cls)] < 20) {
            fail(ErrCode::config, "synth_cube: class " + std::to_string(cls) + " would have only " +
                                      std::to_string(counts[std::size_t(cls)]) +
                                      " labeled pixels (need >= 20)");
        }
    }
    return cube;
}

HsiCube select_bands(const HsiCube& cube, std::size_t count) {
    if (count < 1 || count > cube.bands) {
        fail(ErrCode::config, "select_bands: count " + std::to_string(count) + " out of range [1," +
                                  std::to_string(cube.bands) + "]");
    }
    std::vector<std::size_t> idx(count);
    if (count == 1) {
        idx[0] = 0;
    } else {
        for (std::size_t i = 0; i < count; ++i) {
            idx[i] = std::size_t(std::llround(double(i) * double(cube.bands - 1) / double(count - 1)));
        }
    }
    HsiCube out;
    out.height = cube.height;
    out.width = cube.width;
    out.bands = count;
    out.class_count = cube.class_count;
    out.labels = cube.labels;
    out.reflectance.resize(cube.height * cube.width * count);
    if (!cube.wavelengths.empty()) {
        out.wavelengths.resize(count);
        for (std::size_t i = 0; i < count; ++i) {
            out.wavelengths[i] = cube.wavelengths[idx[i]];
        }
    }
    for (std::size_t p = 0; p < cube.height * cube.width; ++p) {
        for (std::size_t i = 0; i < count; ++i) {
            out.reflectance[p * count + i] = cube.reflectance[p * cube.bands + idx[i]];
        }
    }
    return out;
}

HsiCube normalize(const HsiCube& cube) {
    HsiCube out = cube;
    const std::size_t n = cube.height * cube.width;
    for (std::size_t b = 0; b < cube.bands; ++b) {
        double mean = 0;
        for (std::size_t p = 0; p < n; ++p) {
            mean += cube.reflectance[p * cube.bands + b];
        }
        mean /= double(n);
        double var = 0;
        for (std::size_t p = 0; p < n; ++p) {
            const double d = cube.reflectance[p * cube.bands + b] - mean;
            var += d * d;
        }
        var /= double(n);
        const double sd = std::sqrt(var);
        for (std::size_t p = 0; p < n; ++p) {
            float& v = out.reflectance[p * cube.bands + b];
            v = sd < 1e-12 ? 0.0f : float((v - mean) / sd);
        }
    }
    return out;
}

std::string labels_path_for(const std::string& cube_path) {
    const std::string ext = ".hsic";
    if (cube_path.size() > ext.size() &&
        cube_path.compare(cube_path.size() - ext.size(), ext.size(), ext) == 0) {
        return cube_path.substr(0, cube_path.size() - ext.size()) + ".labels";
    }
    return cube_path + ".labels";
}

void save_cube(const HsiCube& cube, const std::string& path) {
    cube.validate();
    {
        std::ofstream os(path, std::ios::binary);
        if (!os) {
            fail(ErrCode::io, "save_cube: cannot open " + path);
        }
        nlohmann::ordered_json header;
        header["magic"] = "HSIC1";
        header["h"] = cube.height;
        header["w"] = cube.width;
        header["c"] = cube.bands;
        header["dtype"] = "f32";
        if (!cube.wavelengths.empty()) {
            header["wavelengths"] = cube.wavelengths;
        }
        os << header.dump() << '\n';
        for (float v : cube.reflectance) {
            write_f32_le(os, v);
        }
        if (!os) {
            fail(ErrCode::io, "save_cube: write failed for " + path);
        }
    }
    {
        const std::string lp = labels_path_for(path);
        std::ofstream os(lp, std::ios::binary);
        if (!os) {
            fail(ErrCode::io, "save_cube: cannot open " + lp);
        }
        nlohmann::ordered_json header;
        header["magic"] = "HSIL1";
        header["h"] = cube.height;
        header["w"] = cube.width;
        header["k"] = cube.class_count;
        os << header.dump() << '\n';
        for (std::uint16_t l : cube.labels) {
            write_u16_le(os, l);
        }
        if (!os) {
            fail(ErrCode::io, "save_cube: write failed for " + lp);
        }
    }
}

HsiCube load_cube(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        fail(ErrCode::io, "load_cube: cannot open " + path);
    }
    nlohmann::json header = read_header_line(is, path);
    if (header.value("magic", "") != "HSIC1") {
        fail(ErrCode::format, path + ": bad magic, expected HSIC1");
    }
    if (header.value("dtype", "") != "f32") {
        fail(ErrCode::format, path + ": unsupported dtype " + header.value("dtype", "<missing>"));
    }
    HsiCube cube;
    cube.height = header.at("h").get<std::size_t>();
    cube.width = header.at("w").get<std::size_t>();
    cube.bands = header.at("c").get<std::size_t>();
    if (header.contains("wavelengths")) {
        cube.wavelengths = header.at("wavelengths").get<std::vector<float>>();
        if (cube.wavelengths.size() != cube.bands) {
            fail(ErrCode::format, path + ": wavelength count does not match band count");
        }
    }
    const std::size_t want = cube.height * cube.width * cube.bands;
    const auto payload = read_payload(is);
    if (payload.size() != want * 4) {
        fail(ErrCode::format, path + ": truncated payload, header declares " + std::to_string(want) +
                                  " floats but file holds " + std::to_string(payload.size() / 4));
    }
    cube.reflectance.resize(want);
    for (std::size_t i = 0; i < want; ++i) {
        cube.reflectance[i] = read_f32_le(&payload[i * 4]);
    }

    const std::string lp = labels_path_for(path);
    std::ifstream ls(lp, std::ios::binary);
    if (!ls) {
        fail(ErrCode::io, "load_cube: cannot open labels sidecar " + lp);
    }
    nlohmann::json lh = read_header_line(ls, lp);
    if (lh.value("magic", "") != "HSIL1") {
        fail(ErrCode::format, lp + ": bad magic, expected HSIL1");
    }
    if (lh.at("h").get<std::size_t>() != cube.height || lh.at("w").get<std::size_t>() != cube.width) {
        fail(ErrCode::format, lp + ": label map extent does not match cube " +
                                  std::to_string(cube.height) + "x" + std::to_string(cube.width));
    }
    cube.class_count = lh.at("k").get<int>();
    const auto lpayload = read_payload(ls);
    if (lpayload.size() != cube.height * cube.width * 2) {
        fail(ErrCode::format, lp + ": truncated label payload");
    }
    cube.labels.resize(cube.height * cube.width);
    for (std::size_t i = 0; i < cube.labels.size(); ++i) {
        cube.labels[i] = read_u16_le(&lpayload[i * 2]);
    }
    cube.validate();
    return cube;
}

} // namespace mm

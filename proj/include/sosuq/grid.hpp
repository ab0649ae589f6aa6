#pragma once

#include <cstdint>
#include <vector>

namespace sosuq {

/// Rectangular reconstruction grid. Pixel (ix, iz) covers the cell
/// [origin_x + ix*pitch_x, origin_x + (ix+1)*pitch_x) x
/// [origin_z + iz*pitch_z, origin_z + (iz+1)*pitch_z), so the grid spans
/// nx*pitch_x laterally and nz*pitch_z axially. The transducer aperture
/// sits on the z = origin_z edge. Values are stored row-major with x
/// fastest: index = iz*nx + ix.
struct GridSpec {
    int nx = 84;
    int nz = 64;
    double pitch_x = 3e-4; // m
    double pitch_z = 3e-4; // m
    double origin_x = 0.0; // m
    double origin_z = 0.0; // m

    int npix() const { return nx * nz; }
    int index(int ix, int iz) const { return iz * nx + ix; }
    double extent_x() const { return nx * pitch_x; }
    double extent_z() const { return nz * pitch_z; }
    double center_x(int ix) const { return origin_x + (ix + 0.5) * pitch_x; }
    double center_z(int iz) const { return origin_z + (iz + 0.5) * pitch_z; }

    bool operator==(const GridSpec&) const = default;
};

/// Validates dimensions and pitches; throws ConfigError on violation.
GridSpec make_grid(int nx, int nz, double pitch_x, double pitch_z);

/// Speed of sound in m/s on a grid.
struct SosMap {
    GridSpec grid;
    std::vector<double> values;

    SosMap() = default;
    SosMap(const GridSpec& g, double fill) : grid(g), values(static_cast<size_t>(g.npix()), fill) {}
};

/// Inverse speed of sound in s/m on a grid.
struct SlownessMap {
    GridSpec grid;
    std::vector<double> values;

    SlownessMap() = default;
    SlownessMap(const GridSpec& g, double fill) : grid(g), values(static_cast<size_t>(g.npix()), fill) {}
};

SlownessMap to_slowness(const SosMap& c);
SosMap to_sos(const SlownessMap& x);

struct Mask {
    GridSpec grid;
    std::vector<std::uint8_t> bits;

    Mask() = default;
    explicit Mask(const GridSpec& g) : grid(g), bits(static_cast<size_t>(g.npix()), 0) {}

    int count() const;
    bool empty() const { return count() == 0; }
};

} // namespace sosuq

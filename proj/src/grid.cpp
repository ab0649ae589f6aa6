#include "sosuq/grid.hpp"

#include <string>

#include "sosuq/errors.hpp"

namespace sosuq {

GridSpec make_grid(int nx, int nz, double pitch_x, double pitch_z) {
    if (nx < 2 || nz < 2)
        throw ConfigError("grid dimensions must be >= 2, got " + std::to_string(nx) + "x" + std::to_string(nz));
    if (!(pitch_x > 0.0) || !(pitch_z > 0.0))
        throw ConfigError("grid pitch must be positive");
    GridSpec g;
    g.nx = nx;
    g.nz = nz;
    g.pitch_x = pitch_x;
    g.pitch_z = pitch_z;
    return g;
}

SlownessMap to_slowness(const SosMap& c) {
    SlownessMap x;
    x.grid = c.grid;
    x.values.resize(c.values.size());
    for (size_t i = 0; i < c.values.size(); ++i) x.values[i] = 1.0 / c.values[i];
    return x;
}

SosMap to_sos(const SlownessMap& x) {
    SosMap c;
    c.grid = x.grid;
    c.values.resize(x.values.size());
    for (size_t i = 0; i < x.values.size(); ++i) c.values[i] = 1.0 / x.values[i];
    return c;
}

int Mask::count() const {
    int n = 0;
    for (auto b : bits) n += (b != 0);
    return n;
}

} // namespace sosuq

#include "sosuq/sparse.hpp"

#include "sosuq/errors.hpp"
#include "sosuq/kernels.hpp"

namespace sosuq {

void CsrMatrix::matvec(const double* x, double* y, bool accumulate) const {
  kernels::csr_matvec(rows, rowptr.data(), colidx.data(), values.data(), x, y, accumulate);
}

std::vector<double> CsrMatrix::matvec(const std::vector<double>& x) const {
  if (static_cast<int>(x.size()) != cols)
    throw ConfigError("csr matvec: dimension mismatch");
  std::vector<double> y(static_cast<size_t>(rows));
  matvec(x.data(), y.data(), false);
  return y;
}

CsrMatrix CsrMatrix::transposed() const {
  CsrMatrix t;
  t.rows = cols;
  t.cols = rows;
  t.rowptr.assign(static_cast<size_t>(cols) + 1, 0);
  t.colidx.resize(values.size());
  t.values.resize(values.size());

  for (int32_t c : colidx) t.rowptr[static_cast<size_t>(c) + 1]++;
  for (size_t i = 1; i < t.rowptr.size(); ++i) t.rowptr[i] += t.rowptr[i - 1];

  std::vector<int64_t> cursor(t.rowptr.begin(), t.rowptr.end() - 1);
  for (int r = 0; r < rows; ++r)
    for (int64_t k = rowptr[static_cast<size_t>(r)]; k < rowptr[static_cast<size_t>(r) + 1]; ++k) {
      int32_t c = colidx[static_cast<size_t>(k)];
      int64_t dst = cursor[static_cast<size_t>(c)]++;
      t.colidx[static_cast<size_t>(dst)] = r;
      t.values[static_cast<size_t>(dst)] = values[static_cast<size_t>(k)];
    }
  return t;
}

CsrMatrix csr_from_rows(int rows, int cols,
                        const std::vector<std::vector<std::pair<int32_t, double>>>& row_entries) {
  if (static_cast<int>(row_entries.size()) != rows)
    throw ConfigError("csr_from_rows: row count mismatch");
  CsrMatrix m;
  m.rows = rows;
  m.cols = cols;
  m.rowptr.resize(static_cast<size_t>(rows) + 1);
  m.rowptr[0] = 0;
  for (int r = 0; r < rows; ++r)
    m.rowptr[static_cast<size_t>(r) + 1] =
        m.rowptr[static_cast<size_t>(r)] + static_cast<int64_t>(row_entries[static_cast<size_t>(r)].size());
  m.colidx.resize(static_cast<size_t>(m.rowptr.back()));
  m.values.resize(static_cast<size_t>(m.rowptr.back()));
  for (int r = 0; r < rows; ++r) {
    int64_t k = m.rowptr[static_cast<size_t>(r)];
    int32_t prev = -1;
    for (auto [c, v] : row_entries[static_cast<size_t>(r)]) {
      if (c < 0 || c >= cols || c <= prev)
        throw ConfigError("csr_from_rows: columns must be sorted, unique, in range");
      prev = c;
      m.colidx[static_cast<size_t>(k)] = c;
      m.values[static_cast<size_t>(k)] = v;
      ++k;
    }
  }
  return m;
}

} // namespace sosuq

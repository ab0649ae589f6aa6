#pragma once

#include <cstdint>
#include <vector>

namespace sosuq {

/// Compressed sparse row matrix, double precision. Column indices within a
/// row are strictly increasing; construction is deterministic so identical
/// inputs yield byte-identical matrices.
struct CsrMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<int64_t> rowptr;  // rows + 1 entries
  std::vector<int32_t> colidx;  // nnz entries
  std::vector<double> values;   // nnz entries

  int64_t nnz() const { return static_cast<int64_t>(values.size()); }

  /// y (+)= A x. x has cols entries, y has rows entries.
  void matvec(const double* x, double* y, bool accumulate = false) const;
  std::vector<double> matvec(const std::vector<double>& x) const;

  /// Deterministic transpose via column counting sort.
  CsrMatrix transposed() const;
};

/// Builds a CSR matrix from per-row (column, value) lists. Each row list
/// must be sorted by column with unique columns.
CsrMatrix csr_from_rows(int rows, int cols,
                        const std::vector<std::vector<std::pair<int32_t, double>>>& row_entries);

} // namespace sosuq

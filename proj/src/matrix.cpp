#include "dml/matrix.hpp"

#include <cstring>

namespace dml {

bool bitwise_equal(const Matrix<float>& a, const Matrix<float>& b) {
  if (!a.same_shape(b)) return false;
  return a.size() == 0 || std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

}  // namespace dml

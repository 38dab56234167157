#include "irstyle/tensor.hpp"

#include <cmath>
#include <sstream>

namespace irstyle {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::usage: return "usage";
    case ErrorKind::shape: return "shape";
    case ErrorKind::validation: return "validation";
    case ErrorKind::data: return "data";
    case ErrorKind::io: return "io";
    case ErrorKind::version: return "version";
    case ErrorKind::registry: return "registry";
    case ErrorKind::numeric: return "numeric";
  }
  return "unknown";
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <class R>
bool BasicTensor<R>::all_finite() const {
  for (R v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template class BasicTensor<float>;
template class BasicTensor<double>;

}  // namespace irstyle

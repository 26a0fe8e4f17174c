#include "glit/rng.hpp"

#include <sstream>

#include "glit/errors.hpp"

namespace glit {

std::string Rng::state() const {
  std::ostringstream os;
  os << seed_ << ' ' << engine_;
  return os.str();
}

void Rng::set_state(const std::string& state) {
  std::istringstream is(state);
  std::uint64_t seed = 0;
  std::mt19937_64 engine;
  if (!(is >> seed >> engine)) throw FormatError("unreadable rng state");
  seed_ = seed;
  engine_ = engine;
}

}  // namespace glit

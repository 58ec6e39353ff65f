#include "uaed/random.hpp"

#include <sstream>

#include "uaed/error.hpp"

namespace uaed {

std::string serialize_rng(const Rng& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

Rng deserialize_rng(const std::string& state) {
    std::istringstream is(state);
    Rng rng;
    is >> rng;
    if (!is) {
        throw FormatError("corrupt random engine state");
    }
    return rng;
}

} // namespace uaed

#include "uaed/nn.hpp"

namespace uaed::nn {

Activation parse_activation(const std::string& name) {
    if (name == "relu") {
        return Activation::relu;
    }
    if (name == "tanh") {
        return Activation::tanh;
    }
    throw ConfigError("unknown activation '" + name + "' (expected relu or tanh)");
}

const char* to_string(Activation act) { return act == Activation::relu ? "relu" : "tanh"; }

} // namespace uaed::nn

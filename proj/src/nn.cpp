#include "adagan/nn.hpp"

namespace adagan {

const char* layer_kind_name(LayerKind kind) {
    switch (kind) {
        case LayerKind::dense: return "dense";
        case LayerKind::conv: return "conv";
        case LayerKind::maxpool: return "maxpool";
        case LayerKind::relu: return "relu";
        case LayerKind::leaky_relu: return "leaky_relu";
        case LayerKind::sigmoid: return "sigmoid";
        case LayerKind::tanh_act: return "tanh";
        case LayerKind::softmax: return "softmax";
        case LayerKind::flatten: return "flatten";
        case LayerKind::multi_width: return "multi_width";
    }
    return "unknown";
}

std::vector<std::string> classifier_preset_names() {
    return {"mlp", "cnn_small", "cnn_medium", "cnn_wide"};
}

NetworkSpec classifier_preset(const std::string& name, int class_count) {
    if (class_count < 2) throw BuildError("classifier needs at least 2 classes");
    NetworkSpec spec;
    spec.name = name;
    spec.input_shape = {1, 28, 28};
    spec.output_kind = OutputKind::probabilities;
    using L = LayerSpec;
    if (name == "mlp") {
        spec.layers = {L::flatten(), L::dense(256), L::relu(), L::dense(class_count),
                       L::softmax()};
    } else if (name == "cnn_small") {
        spec.layers = {L::conv(8, 3),  L::relu(), L::maxpool(2),
                       L::conv(16, 3), L::relu(), L::maxpool(2),
                       L::flatten(),   L::dense(class_count), L::softmax()};
    } else if (name == "cnn_medium") {
        spec.layers = {L::conv(8, 3, 1, 1),  L::relu(), L::maxpool(2),
                       L::conv(16, 3, 1, 1), L::relu(), L::maxpool(2),
                       L::conv(24, 3, 1, 1), L::relu(),
                       L::flatten(),         L::dense(64), L::relu(),
                       L::dense(class_count), L::softmax()};
    } else if (name == "cnn_wide") {
        // parallel 1/3/5 convolutions concatenated along channels
        spec.layers = {L::conv(8, 3, 1, 1), L::relu(), L::maxpool(2),
                       L::multi_width(8, {1, 3, 5}), L::relu(), L::maxpool(2),
                       L::flatten(), L::dense(64), L::relu(),
                       L::dense(class_count), L::softmax()};
    } else {
        throw BuildError("unknown classifier preset '" + name + "'");
    }
    return spec;
}

NetworkSpec generator_spec(int latent_dim) {
    if (latent_dim < 1) throw BuildError("generator needs latent_dim >= 1");
    NetworkSpec spec;
    spec.name = "generator";
    spec.input_shape = {latent_dim};
    spec.output_kind = OutputKind::image;
    using L = LayerSpec;
    spec.layers = {L::dense(256), L::leaky_relu(0.2), L::dense(512), L::leaky_relu(0.2),
                   L::dense(784), L::sigmoid()};
    return spec;
}

NetworkSpec discriminator_spec() {
    NetworkSpec spec;
    spec.name = "discriminator";
    spec.input_shape = {1, 28, 28};
    spec.output_kind = OutputKind::scalar_prob;
    using L = LayerSpec;
    spec.layers = {L::flatten(), L::dense(512), L::leaky_relu(0.2), L::dense(256),
                   L::leaky_relu(0.2), L::dense(1), L::sigmoid()};
    return spec;
}

}  // namespace adagan

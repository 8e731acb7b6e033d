#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "densiclip/autodiff.hpp"
#include "densiclip/checkpoint.hpp"
#include "densiclip/density.hpp"
#include "densiclip/loss.hpp"

namespace densiclip {

// One vision-tower stage: 3x3 convolution (stride 1, zero padding 1) with
// relu, followed by pool-stride downsampling via 2x2 max pooling.
struct ConvBlockConfig {
    int channels = 8;
    int kernel = 3;
    int pool_stride = 2;
};

struct VisionEncoderConfig {
    int input_size = 224;
    std::vector<ConvBlockConfig> conv_blocks = {{8, 3, 2}, {16, 3, 2}, {32, 3, 2}, {32, 3, 2}};
    int embed_dim = 64;

    void validate() const;       // config_error on violation
    int saliency_size() const;   // spatial edge of the final block's map
    int saliency_channels() const;
};

struct TextEncoderConfig {
    std::vector<std::string> vocabulary; // ordered lowercase tokens
    int token_embed_dim = 32;
    int embed_dim = 64;

    void validate() const;
};

// Trainable vision and text towers projecting into one L2-normalized
// embedding space, with a learnable log-temperature similarity scale.
class DualEncoderModel {
public:
    DualEncoderModel(VisionEncoderConfig vision, TextEncoderConfig text, uint64_t seed);

    const VisionEncoderConfig& vision_config() const { return vision_; }
    const TextEncoderConfig& text_config() const { return text_; }

    // Named trainable tensors in a stable order (checkpoint and optimizer
    // order). log_temperature is the final entry.
    const std::vector<std::pair<std::string, ad::Var>>& parameters() const { return params_; }

    // images: {N,1,S,S} with values in [0,1] -> unit-norm embeddings {N,D}.
    // When saliency_out is given it receives the final conv block's
    // activation map {N,C,s,s} so callers can read its gradients after a
    // backward pass.
    ad::Var encode_images(const ad::Var& images, ad::Var* saliency_out = nullptr) const;
    ad::Var encode_images(const Array& images, ad::Var* saliency_out = nullptr) const;

    // One prompt -> unit-norm embedding {1,D}. Tokens must be in vocabulary.
    ad::Var encode_text(const std::string& prompt) const;
    // K prompts -> {K,D}.
    ad::Var encode_prompts(const ClassPromptSet& prompts) const;

    // Temperature-scaled cosine similarities {N,K} between image embeddings
    // and prompt embeddings (both unit-norm, so the matrix product is the
    // cosine), scaled by exp(log_temperature).
    ad::Var similarity_matrix(const ad::Var& image_embeddings, const ad::Var& prompt_embeddings) const;
    Array similarity_matrix(const Array& images, const ClassPromptSet& prompts) const;

    double temperature_scale() const;      // exp(log_temperature)
    const ad::Var& log_temperature() const; // the learnable scale parameter

    // Stack {H,W} grayscale arrays into the {N,1,S,S} batch layout.
    static Array stack_images(const std::vector<const Array*>& images, int input_size);

    // Checkpoint round trip (values quantized to f32 by the archive).
    TensorArchive to_archive() const;
    void save(const std::string& path) const;
    static DualEncoderModel load(const std::string& path);

    // Optimizer entry point: overwrite a parameter's value.
    void set_parameter(const std::string& name, const Array& value);

private:
    VisionEncoderConfig vision_;
    TextEncoderConfig text_;
    std::vector<std::pair<std::string, ad::Var>> params_;
    std::unordered_map<std::string, size_t> param_index_;
    std::unordered_map<std::string, int> vocab_index_;

    const ad::Var& param(const std::string& name) const;
    Array prompt_count_matrix(const std::vector<std::string>& prompts) const;
};

} // namespace densiclip

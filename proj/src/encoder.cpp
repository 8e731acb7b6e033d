#include "densiclip/encoder.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

#include "densiclip/errors.hpp"
#include "densiclip/rng.hpp"

namespace densiclip {

namespace {

Array glorot_uniform(const std::vector<int>& shape, int fan_in, int fan_out, Rng& rng) {
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    Array out = Array::zeros(shape);
    for (double& v : out.data) v = rng.uniform(-a, a);
    return out;
}

void check_unit_interval(const Array& images, const char* where) {
    for (double v : images.data)
        if (!(v >= 0.0 && v <= 1.0))
            throw data_error(std::string(where) + ": pixel values must lie in [0,1], found " + std::to_string(v));
}

std::string join_blocks(const std::vector<ConvBlockConfig>& blocks) {
    std::ostringstream out;
    for (size_t i = 0; i < blocks.size(); ++i) {
        if (i) out << ",";
        out << blocks[i].channels << ":" << blocks[i].kernel << ":" << blocks[i].pool_stride;
    }
    return out.str();
}

std::vector<ConvBlockConfig> parse_blocks(const std::string& text) {
    std::vector<ConvBlockConfig> blocks;
    std::istringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        ConvBlockConfig b;
        if (std::sscanf(item.c_str(), "%d:%d:%d", &b.channels, &b.kernel, &b.pool_stride) != 3)
            throw io_error("malformed conv block \"" + item + "\" (want channels:kernel:pool)");
        blocks.push_back(b);
    }
    return blocks;
}

} // namespace

void VisionEncoderConfig::validate() const {
    if (input_size <= 0) throw config_error("vision encoder: input_size must be positive");
    if (embed_dim <= 0) throw config_error("vision encoder: embed_dim must be positive");
    if (conv_blocks.empty()) throw config_error("vision encoder: at least one conv block required");
    int size = input_size;
    for (const auto& b : conv_blocks) {
        if (b.channels <= 0) throw config_error("vision encoder: conv channels must be positive");
        if (b.kernel <= 0 || b.kernel % 2 == 0)
            throw config_error("vision encoder: conv kernel must be odd so padding preserves size");
        if (b.pool_stride < 1) throw config_error("vision encoder: pool stride must be at least 1");
        if (b.pool_stride > 1) {
            if (size % b.pool_stride != 0)
                throw config_error("vision encoder: input_size " + std::to_string(input_size) +
                                   " does not survive the pooling chain");
            size /= b.pool_stride;
        }
    }
    if (size < 2) throw config_error("vision encoder: saliency layer collapsed below 2x2");
}

int VisionEncoderConfig::saliency_size() const {
    int size = input_size;
    for (const auto& b : conv_blocks)
        if (b.pool_stride > 1) size /= b.pool_stride;
    return size;
}

int VisionEncoderConfig::saliency_channels() const { return conv_blocks.back().channels; }

void TextEncoderConfig::validate() const {
    if (vocabulary.empty()) throw config_error("text encoder: empty vocabulary");
    if (token_embed_dim <= 0) throw config_error("text encoder: token_embed_dim must be positive");
    if (embed_dim <= 0) throw config_error("text encoder: embed_dim must be positive");
    std::unordered_set<std::string> seen;
    for (const auto& tok : vocabulary) {
        if (tok.empty()) throw config_error("text encoder: empty vocabulary token");
        const auto canon = tokenize(tok);
        if (canon.size() != 1 || canon[0] != tok)
            throw config_error("text encoder: vocabulary token \"" + tok + "\" is not a canonical lowercase word");
        if (!seen.insert(tok).second) throw config_error("text encoder: duplicate vocabulary token \"" + tok + "\"");
    }
}

DualEncoderModel::DualEncoderModel(VisionEncoderConfig vision, TextEncoderConfig text, uint64_t seed)
    : vision_(std::move(vision)), text_(std::move(text)) {
    vision_.validate();
    text_.validate();
    if (vision_.embed_dim != text_.embed_dim)
        throw config_error("dual encoder: vision and text embed_dim differ (" + std::to_string(vision_.embed_dim) +
                           " vs " + std::to_string(text_.embed_dim) + ")");
    for (size_t i = 0; i < text_.vocabulary.size(); ++i) vocab_index_[text_.vocabulary[i]] = static_cast<int>(i);

    Rng rng(Rng::mix(seed, 0xe11c0de));
    auto push = [this](const std::string& name, Array value) {
        param_index_[name] = params_.size();
        params_.emplace_back(name, ad::parameter(std::move(value)));
    };

    int in_channels = 1;
    for (size_t i = 0; i < vision_.conv_blocks.size(); ++i) {
        const auto& b = vision_.conv_blocks[i];
        const std::string stem = "vision.conv" + std::to_string(i + 1);
        push(stem + ".weight", glorot_uniform({b.channels, in_channels, b.kernel, b.kernel},
                                              in_channels * b.kernel * b.kernel, b.channels * b.kernel * b.kernel,
                                              rng));
        push(stem + ".bias", Array::zeros({b.channels}));
        in_channels = b.channels;
    }
    push("vision.proj.weight",
         glorot_uniform({in_channels, vision_.embed_dim}, in_channels, vision_.embed_dim, rng));
    push("vision.proj.bias", Array::zeros({vision_.embed_dim}));

    const int v = static_cast<int>(text_.vocabulary.size());
    push("text.token_embedding", glorot_uniform({v, text_.token_embed_dim}, v, text_.token_embed_dim, rng));
    push("text.proj.weight",
         glorot_uniform({text_.token_embed_dim, text_.embed_dim}, text_.token_embed_dim, text_.embed_dim, rng));
    push("text.proj.bias", Array::zeros({text_.embed_dim}));

    push("log_temperature", Array::scalar(std::log(10.0)));
}

const ad::Var& DualEncoderModel::param(const std::string& name) const {
    const auto it = param_index_.find(name);
    if (it == param_index_.end()) throw data_error("dual encoder: unknown parameter " + name);
    return params_[it->second].second;
}

ad::Var DualEncoderModel::encode_images(const ad::Var& images, ad::Var* saliency_out) const {
    const auto& shape = images.value().shape;
    if (shape.size() != 4 || shape[1] != 1 || shape[2] != vision_.input_size || shape[3] != vision_.input_size)
        throw data_error("encode_images: expects {N,1," + std::to_string(vision_.input_size) + "," +
                         std::to_string(vision_.input_size) + "}, got " + images.value().shape_str());
    ad::Var x = images;
    for (size_t i = 0; i < vision_.conv_blocks.size(); ++i) {
        const auto& b = vision_.conv_blocks[i];
        const std::string stem = "vision.conv" + std::to_string(i + 1);
        x = ad::relu(ad::conv2d(x, param(stem + ".weight"), param(stem + ".bias"), 1, b.kernel / 2));
        if (b.pool_stride > 1) x = ad::max_pool2d(x, b.pool_stride, b.pool_stride);
    }
    if (saliency_out) *saliency_out = x;
    const ad::Var features = ad::global_avg_pool(x);
    return ad::l2_normalize(ad::dense(features, param("vision.proj.weight"), param("vision.proj.bias")));
}

ad::Var DualEncoderModel::encode_images(const Array& images, ad::Var* saliency_out) const {
    check_unit_interval(images, "encode_images");
    return encode_images(ad::constant(images), saliency_out);
}

Array DualEncoderModel::prompt_count_matrix(const std::vector<std::string>& prompts) const {
    if (prompts.empty()) throw data_error("encode_text: empty prompt list");
    const int v = static_cast<int>(text_.vocabulary.size());
    Array counts = Array::zeros({static_cast<int>(prompts.size()), v});
    for (size_t p = 0; p < prompts.size(); ++p) {
        const auto tokens = tokenize(prompts[p]);
        if (tokens.empty()) throw data_error("encode_text: prompt \"" + prompts[p] + "\" has no tokens");
        for (const auto& tok : tokens) {
            const auto it = vocab_index_.find(tok);
            if (it == vocab_index_.end())
                throw data_error("encode_text: token \"" + tok + "\" is not in the vocabulary");
            counts.at(static_cast<int>(p), it->second) += 1.0 / static_cast<double>(tokens.size());
        }
    }
    return counts;
}

ad::Var DualEncoderModel::encode_text(const std::string& prompt) const {
    // mean-pooled token embeddings, expressed as a count-vector product
    const ad::Var counts = ad::constant(prompt_count_matrix({prompt}));
    const ad::Var pooled = ad::matmul(counts, param("text.token_embedding"));
    return ad::l2_normalize(ad::dense(pooled, param("text.proj.weight"), param("text.proj.bias")));
}

ad::Var DualEncoderModel::encode_prompts(const ClassPromptSet& prompts) const {
    prompts.validate();
    if (prompts.size() < 2) throw data_error("encode_prompts: need at least 2 prompts");
    const ad::Var counts = ad::constant(prompt_count_matrix(prompts.prompts));
    const ad::Var pooled = ad::matmul(counts, param("text.token_embedding"));
    return ad::l2_normalize(ad::dense(pooled, param("text.proj.weight"), param("text.proj.bias")));
}

ad::Var DualEncoderModel::similarity_matrix(const ad::Var& image_embeddings, const ad::Var& prompt_embeddings) const {
    if (image_embeddings.value().numel() == 0 || image_embeddings.value().shape[0] < 1)
        throw data_error("similarity_matrix: empty image batch");
    const ad::Var cosines = ad::matmul_nt(image_embeddings, prompt_embeddings);
    return ad::scalar_mul(cosines, ad::exp(param("log_temperature")));
}

Array DualEncoderModel::similarity_matrix(const Array& images, const ClassPromptSet& prompts) const {
    return similarity_matrix(encode_images(images), encode_prompts(prompts)).value();
}

double DualEncoderModel::temperature_scale() const { return std::exp(param("log_temperature").value()[0]); }

const ad::Var& DualEncoderModel::log_temperature() const { return param("log_temperature"); }

Array DualEncoderModel::stack_images(const std::vector<const Array*>& images, int input_size) {
    if (images.empty()) throw data_error("stack_images: empty batch");
    Array out = Array::zeros({static_cast<int>(images.size()), 1, input_size, input_size});
    const size_t plane = static_cast<size_t>(input_size) * input_size;
    for (size_t i = 0; i < images.size(); ++i) {
        const Array& img = *images[i];
        if (img.rank() != 2 || img.shape[0] != input_size || img.shape[1] != input_size)
            throw data_error("stack_images: image " + std::to_string(i) + " has shape " + img.shape_str() +
                             ", expected {" + std::to_string(input_size) + "," + std::to_string(input_size) + "}");
        std::copy(img.data.begin(), img.data.end(), out.data.begin() + static_cast<ptrdiff_t>(i * plane));
    }
    return out;
}

TensorArchive DualEncoderModel::to_archive() const {
    TensorArchive archive;
    archive.set_config("format", "dual-encoder");
    archive.set_config("vision.input_size", std::to_string(vision_.input_size));
    archive.set_config("vision.conv_blocks", join_blocks(vision_.conv_blocks));
    archive.set_config("vision.embed_dim", std::to_string(vision_.embed_dim));
    archive.set_config("text.token_embed_dim", std::to_string(text_.token_embed_dim));
    archive.set_config("text.embed_dim", std::to_string(text_.embed_dim));
    std::ostringstream vocab;
    for (size_t i = 0; i < text_.vocabulary.size(); ++i) vocab << (i ? " " : "") << text_.vocabulary[i];
    archive.set_config("text.vocabulary", vocab.str());
    for (const auto& [name, var] : params_) archive.add_tensor(name, var.value());
    return archive;
}

void DualEncoderModel::save(const std::string& path) const { to_archive().save(path); }

DualEncoderModel DualEncoderModel::load(const std::string& path) {
    const TensorArchive archive = TensorArchive::load(path);
    if (!archive.has_config("format") || archive.config_at("format") != "dual-encoder")
        throw io_error(path + ": not a dual-encoder checkpoint");
    VisionEncoderConfig vision;
    TextEncoderConfig text;
    try {
        vision.input_size = std::stoi(archive.config_at("vision.input_size"));
        vision.conv_blocks = parse_blocks(archive.config_at("vision.conv_blocks"));
        vision.embed_dim = std::stoi(archive.config_at("vision.embed_dim"));
        text.token_embed_dim = std::stoi(archive.config_at("text.token_embed_dim"));
        text.embed_dim = std::stoi(archive.config_at("text.embed_dim"));
    } catch (const std::exception& e) {
        throw io_error(path + ": malformed checkpoint config: " + e.what());
    }
    std::istringstream vocab_in(archive.config_at("text.vocabulary"));
    std::string tok;
    while (vocab_in >> tok) text.vocabulary.push_back(tok);

    DualEncoderModel model(vision, text, 0);
    for (auto& [name, var] : model.params_) model.set_parameter(name, archive.tensor_at(name));
    return model;
}

void DualEncoderModel::set_parameter(const std::string& name, const Array& value) {
    const auto it = param_index_.find(name);
    if (it == param_index_.end()) throw data_error("dual encoder: unknown parameter " + name);
    check_finite(value, "set_parameter");
    params_[it->second].second.assign_value(value);
}

} // namespace densiclip

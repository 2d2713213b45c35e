#include "capsforge/config_io.hpp"

#include <fstream>

#include <openssl/evp.h>

namespace capsforge {

void to_json(nlohmann::json& j, const CapsNetConfig& cfg) {
    j = nlohmann::json{{"in_channels", cfg.in_channels},
                       {"in_h", cfg.in_h},
                       {"in_w", cfg.in_w},
                       {"conv1_maps", cfg.conv1_maps},
                       {"conv1_kernel", cfg.conv1_kernel},
                       {"primary_types", cfg.primary_types},
                       {"primary_dim", cfg.primary_dim},
                       {"primary_kernel", cfg.primary_kernel},
                       {"primary_stride", cfg.primary_stride},
                       {"num_classes", cfg.num_classes},
                       {"digit_dim", cfg.digit_dim},
                       {"routing_iters", cfg.routing_iters},
                       {"decoder_hidden", cfg.decoder_hidden},
                       {"margin_m_plus", cfg.margin_m_plus},
                       {"margin_m_minus", cfg.margin_m_minus},
                       {"margin_lambda", cfg.margin_lambda},
                       {"recon_weight", cfg.recon_weight}};
}

void from_json(const nlohmann::json& j, CapsNetConfig& cfg) {
    j.at("in_channels").get_to(cfg.in_channels);
    j.at("in_h").get_to(cfg.in_h);
    j.at("in_w").get_to(cfg.in_w);
    j.at("conv1_maps").get_to(cfg.conv1_maps);
    j.at("conv1_kernel").get_to(cfg.conv1_kernel);
    j.at("primary_types").get_to(cfg.primary_types);
    j.at("primary_dim").get_to(cfg.primary_dim);
    j.at("primary_kernel").get_to(cfg.primary_kernel);
    j.at("primary_stride").get_to(cfg.primary_stride);
    j.at("num_classes").get_to(cfg.num_classes);
    j.at("digit_dim").get_to(cfg.digit_dim);
    j.at("routing_iters").get_to(cfg.routing_iters);
    j.at("decoder_hidden").get_to(cfg.decoder_hidden);
    j.at("margin_m_plus").get_to(cfg.margin_m_plus);
    j.at("margin_m_minus").get_to(cfg.margin_m_minus);
    j.at("margin_lambda").get_to(cfg.margin_lambda);
    j.at("recon_weight").get_to(cfg.recon_weight);
}

void to_json(nlohmann::json& j, const CnnConfig& cfg) {
    j = nlohmann::json{{"in_channels", cfg.in_channels},
                       {"in_h", cfg.in_h},
                       {"in_w", cfg.in_w},
                       {"conv_maps", cfg.conv_maps},
                       {"conv_kernel", cfg.conv_kernel},
                       {"pool_window", cfg.pool_window},
                       {"pool_stride", cfg.pool_stride},
                       {"dense_hidden", cfg.dense_hidden},
                       {"num_classes", cfg.num_classes}};
}

void from_json(const nlohmann::json& j, CnnConfig& cfg) {
    j.at("in_channels").get_to(cfg.in_channels);
    j.at("in_h").get_to(cfg.in_h);
    j.at("in_w").get_to(cfg.in_w);
    j.at("conv_maps").get_to(cfg.conv_maps);
    j.at("conv_kernel").get_to(cfg.conv_kernel);
    j.at("pool_window").get_to(cfg.pool_window);
    j.at("pool_stride").get_to(cfg.pool_stride);
    j.at("dense_hidden").get_to(cfg.dense_hidden);
    j.at("num_classes").get_to(cfg.num_classes);
}

void to_json(nlohmann::json& j, const TrainConfig& cfg) {
    j = nlohmann::json{{"epochs", cfg.epochs},     {"batch_size", cfg.batch_size},
                       {"seed", cfg.seed},         {"optimizer", cfg.optimizer},
                       {"lr", cfg.lr},             {"check_routing", cfg.check_routing}};
}

void from_json(const nlohmann::json& j, TrainConfig& cfg) {
    j.at("epochs").get_to(cfg.epochs);
    j.at("batch_size").get_to(cfg.batch_size);
    j.at("seed").get_to(cfg.seed);
    j.at("optimizer").get_to(cfg.optimizer);
    j.at("lr").get_to(cfg.lr);
    j.at("check_routing").get_to(cfg.check_routing);
}

nlohmann::json parse_config_json(const std::string& text) {
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(std::string("config snapshot is not valid JSON: ") + e.what());
    }
}

std::string sha256_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path + " for hashing");
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
        if (ctx) EVP_MD_CTX_free(ctx);
        throw Error("sha256: digest init failed");
    }
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof(buf));
        const std::streamsize got = in.gcount();
        if (got > 0 && EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(got)) != 1) {
            EVP_MD_CTX_free(ctx);
            throw Error("sha256: digest update failed");
        }
    }
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx, digest, &len) != 1) {
        EVP_MD_CTX_free(ctx);
        throw Error("sha256: digest final failed");
    }
    EVP_MD_CTX_free(ctx);
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 0xf];
    }
    return out;
}

}  // namespace capsforge

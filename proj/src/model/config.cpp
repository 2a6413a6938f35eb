#include "model/config.hpp"

namespace avdit {

void ModelConfig::validate() const {
    check_config(dim > 0 && heads > 0 && depth > 0 && patch > 0 && frames > 0,
                 "model: dim/heads/depth/patch/frames must be positive");
    check_config(dim % 2 == 0, "model: dim must be even for sin-cos embeddings");
    check_config(dim % heads == 0, "model: dim must be divisible by heads");
    check_config(video_h > 0 && video_w > 0 && video_c > 0 && audio_t > 0 && audio_f > 0 &&
                     audio_c > 0,
                 "model: latent dims must be positive");
    check_config(video_h % patch == 0 && video_w % patch == 0,
                 "model: video latent dims must be divisible by patch");
    check_config(audio_t % patch == 0 && audio_f % patch == 0,
                 "model: audio latent dims must be divisible by patch");
    check_config(temporal_ratio > 0 && audio_ratio > 0 && fusion_ratio > 0,
                 "model: adapter ratios must be positive");
    check_config(dim % (temporal_ratio * heads) == 0,
                 "model: dim must be divisible by temporal_ratio * heads");
    check_config(dim % audio_ratio == 0, "model: dim must be divisible by audio_ratio");
    check_config(dim % fusion_ratio == 0, "model: dim must be divisible by fusion_ratio");
    check_config(pretrain_steps >= 0, "model: pretrain_steps must be non-negative");
}

}  // namespace avdit

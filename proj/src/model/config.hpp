#pragma once

#include <string>

#include "core/common.hpp"

namespace avdit {

enum class VarianceMode { kFixed, kLearnedRange };
enum class FusionMode { kSelfAttention, kCrossAttention };
enum class BackboneMode { kSeededRandom, kSyntheticPretrain };

struct ModelConfig {
    int dim = 64;
    int heads = 4;
    int depth = 4;
    int patch = 2;
    int frames = 4;
    int video_h = 8, video_w = 8, video_c = 4;
    int audio_t = 8, audio_f = 4, audio_c = 4;
    int temporal_ratio = 8;
    int audio_ratio = 2;
    int fusion_ratio = 2;
    VarianceMode variance = VarianceMode::kFixed;
    FusionMode fusion = FusionMode::kSelfAttention;
    BackboneMode backbone = BackboneMode::kSeededRandom;
    int pretrain_steps = 300;

    // ablation switches: removed modules disappear from both the forward
    // path and the parameter registry
    bool no_temporal = false;
    bool no_audio_ffn_adapter = false;
    bool no_audio_lora = false;
    bool no_fusion = false;
    bool no_fusion_lora = false;

    int video_tokens() const { return (video_h / patch) * (video_w / patch); }
    int audio_tokens() const { return (audio_t / patch) * (audio_f / patch); }
    int video_patch_dim() const { return patch * patch * video_c; }
    int audio_patch_dim() const { return patch * patch * audio_c; }
    int64_t video_numel() const {
        return static_cast<int64_t>(frames) * video_h * video_w * video_c;
    }
    int64_t audio_numel() const { return static_cast<int64_t>(audio_t) * audio_f * audio_c; }
    int lora_rank_audio() const { return dim / audio_ratio; }
    int lora_rank_fusion() const { return dim / fusion_ratio; }
    int temporal_qk_dim() const { return dim / temporal_ratio; }

    void validate() const;
};

}  // namespace avdit

#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "difsel/architecture.hpp"
#include "difsel/extraction.hpp"

namespace difsel {

// A miniature latent U-Net with the full module taxonomy. Level i of the down
// stage and level L-1-i of the up stage share resolution 1/2^i of the latent.
struct ToySpec {
  std::string name = "toy";
  std::vector<int> widths{8, 16, 32};       // per resolution, highest first
  std::vector<int> down_vit_blocks{1, 1, 0};
  std::vector<int> up_vit_blocks{2, 2, 1};  // up level 0 is the lowest resolution
  int mid_vit_blocks = 1;
  int down_repeats = 1;
  int up_repeats = 3;
  int latent_factor = 4;
  int latent_channels = 4;
  int context_tokens = 8;
  int vocabulary = 64;
  int token_dim = 16;
  int time_dim = 16;
  std::uint64_t weight_seed = 0;
};

// Throws ConfigError on an inconsistent spec.
void validate(const ToySpec& spec);

// The matching layout. The later half starts at the last repeat of the
// second-highest resolution; the final resolution keeps self-q/self-k.
ArchitectureSpec toy_architecture(const ToySpec& spec);

// Hashes a prompt to BOS, word tokens, EOS, padding. Only word tokens are retained.
PromptTokens tokenize_prompt(const std::string& prompt, int context_tokens, int vocabulary);

class ToyBackbone final : public BackboneAdapter {
 public:
  explicit ToyBackbone(ToySpec spec = {});
  ~ToyBackbone() override;
  ToyBackbone(ToyBackbone&&) noexcept;
  ToyBackbone& operator=(ToyBackbone&&) noexcept;

  const ArchitectureSpec& architecture() const override { return arch_; }
  const ToySpec& spec() const noexcept { return spec_; }

  ForwardCapture run(const Image& image, const ExtractionConfig& config, const CaptureRequest& request) override;

 private:
  struct Net;
  ToySpec spec_;
  ArchitectureSpec arch_;
  std::unique_ptr<Net> net_;
};

std::unique_ptr<BackboneAdapter> build_toy_adapter(const ToySpec& spec = {});

}  // namespace difsel

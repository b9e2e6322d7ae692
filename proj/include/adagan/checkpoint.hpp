#pragma once

#include <string>

#include "adagan/gan.hpp"
#include "adagan/nn.hpp"

namespace adagan {

/// Binary network checkpoint: magic "AGCK", little-endian fields, full
/// architecture description followed by float32 parameters in layer order.
void save_network(const std::string& path, Network<float>& network);
Network<float> load_network(const std::string& path);

/// GAN pair checkpoint: magic "AGPR", class/latent metadata, then the
/// generator and discriminator as embedded network blocks.
void save_gan_pair(const std::string& path, GanPair& pair);
GanPair load_gan_pair(const std::string& path);

}  // namespace adagan

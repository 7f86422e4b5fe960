// Regenerates the golden rasters: make_golden <fixture dir>
#include <filesystem>
#include <iostream>

#include "fixture_config.hpp"
#include "latentdrag/generator/raster_io.hpp"

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: make_golden <dir>\n";
    return 2;
  }
  using namespace latentdrag;
  const std::filesystem::path dir = argv[1];
  const generator::Generator gen(testutil::golden_config());
  const auto zero = gen.zero_latent();
  generator::write_raw(dir / "zero_latent_image.ldr", gen.render(zero));
  generator::write_raw(dir / "zero_latent_features.ldr", gen.features(zero));
  std::cout << "wrote golden rasters to " << dir << "\n";
}

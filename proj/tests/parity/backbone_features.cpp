// Runs the ResNet34 backbone on a raw float32 NCHW input and writes the
// feature map as raw float32. Used by torchvision_parity.py.

#include <cstdio>
#include <cstdlib>
#include <fstream>

#include "woodid/archive.hpp"
#include "woodid/nn/resnet.hpp"

int main(int argc, char** argv) {
  if (argc != 6) {
    std::fprintf(stderr, "usage: %s WEIGHTS INPUT HEIGHT WIDTH OUTPUT\n", argv[0]);
    return 2;
  }
  using namespace woodid;
  nn::ResNet34Backbone<float> backbone;
  const TensorArchive archive = TensorArchive::load(argv[1]);
  backbone.visit("", [&](const std::string& name, nn::Mat<float>& t, nn::Parameter<float>*) {
    t = archive.get<float>(name, t.rows(), t.cols());
  });
  nn::Tensor<float> x(1, 3, std::atoi(argv[3]), std::atoi(argv[4]));
  std::ifstream in(argv[2], std::ios::binary);
  in.read(reinterpret_cast<char*>(x.data().data()), static_cast<std::streamsize>(x.size() * sizeof(float)));
  if (!in) {
    std::fprintf(stderr, "short input\n");
    return 2;
  }
  const nn::Tensor<float> y = backbone.infer(x);
  std::ofstream(argv[5], std::ios::binary)
      .write(reinterpret_cast<const char*>(y.data().data()), static_cast<std::streamsize>(y.size() * sizeof(float)));
  return 0;
}

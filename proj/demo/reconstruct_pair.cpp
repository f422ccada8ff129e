// Generates a chair, renders it, and runs an untrained model on one view
// pair: selection probabilities from the base view, then the fused and
// refined volume for the most probable next view.

#include <cstdio>

#include "nvs/nvs.hpp"

int main() {
  using namespace nvs;
  const auto truth = generate_shape(ShapeClass::kChair, 42);
  const auto sphere = canonical_sphere();
  const auto views = render_all(truth, sphere, kDefaultImageSize);

  Model<float> model(ModelConfig{});
  ad::NoGradGuard no_grad;
  const auto base = sphere[7];
  const auto probs = model.nvs_forward(images_to_tensor<float>(std::vector<const Image*>{&views[7]}));
  std::vector<double> p(probs.data().begin(), probs.data().end());
  const int next = argmax(p);
  std::printf("base view %d, next view %d (p = %.3f), farthest would be %d\n", base.id, next, p[next],
              farthest_view(base, sphere).id);

  const auto volume = model.reconstruct_pair(views[7], views[static_cast<std::size_t>(next)]);
  VoxelGrid pred(truth.resolution(), std::vector<float>(volume.data().begin(), volume.data().end()));
  std::printf("occupied voxels %zu, IoU before training %.3f\n", truth.count(), iou(pred, truth, kDefaultThreshold));
}

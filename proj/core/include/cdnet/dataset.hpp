#pragma once

#include <string>
#include <vector>

#include "cdnet/image_io.hpp"
#include "cdnet/rng.hpp"
#include "cdnet/tensor.hpp"

namespace cdnet {

// A co-registered bi-temporal pair plus its binary change mask. Masks are
// stored with values {0,1}; on disk they are 0/255 PGM files.
struct SamplePair {
  std::string id;
  ImageU8 t1, t2;   // RGB
  ImageU8 mask;     // single channel, values in {0,1}
  void validate() const;  // extents agree, mask binary
};

// Non-overlapping row-major tiling. Remainders smaller than `size` are
// dropped. Tile ids are "<id>_r<row>_c<col>". Images smaller than the tile
// return an empty list.
std::vector<SamplePair> tile(const SamplePair& pair, int64_t size = 256);

// Inverse of tile for full-coverage grids: reassembles rows x cols tiles
// (row-major) into one pair. The stitched id is the common prefix.
SamplePair stitch(const std::vector<SamplePair>& tiles, int64_t rows,
                  int64_t cols);

// Index map shared by all rasters of a pair: k quarter-turns
// (counterclockwise) followed by optional horizontal / vertical flips.
ImageU8 apply_aug(const ImageU8& img, int k, bool flip_h, bool flip_v);

// Uniformly random k in 0..3 and independent flips, applied identically to
// t1, t2, and mask. Consumes exactly three rng draws.
SamplePair augment(const SamplePair& pair, Rng& rng);

// Procedural dataset: a shared background texture with static decoy shapes,
// plus "change" shapes present in only one of the two epochs; the mask is
// the exact union of changed pixels.
std::vector<SamplePair> synth_dataset(int n, int64_t size, uint64_t seed);

struct ManifestEntry {
  std::string id, t1, t2, mask;  // paths are relative to the manifest file
};

// Writes <id>_t1.ppm / _t2.ppm / _mask.pgm for every sample plus
// manifest.txt ("id\tt1\tt2\tmask" per line); returns the manifest path.
std::string save_dataset(const std::string& dir,
                         const std::vector<SamplePair>& samples);

std::vector<ManifestEntry> read_manifest(const std::string& manifest_path);
SamplePair load_pair(const ManifestEntry& entry);
std::vector<SamplePair> load_dataset(const std::string& manifest_path);

// Conversions used by training/prediction. Images scale to [0,1].
Tensor image_to_tensor(const ImageU8& img);             // [1,ch,H,W]
Tensor mask_to_tensor(const ImageU8& mask);             // [1,1,H,W] of {0,1}
Tensor batch_images(const std::vector<const ImageU8*>& imgs);
ImageU8 tensor_to_mask(const Tensor& t, double threshold);  // prob -> {0,1}

}  // namespace cdnet

// SPDX-License-Identifier: Apache-2.0
#include "cimn/sampling.hpp"

#include <algorithm>
#include <set>

#include "cimn/rng.hpp"

namespace cimn::sampling {

namespace {

constexpr std::uint64_t kSctTag = 0x7363742d73706c74ull;
constexpr std::uint64_t kCgTag = 0x63672d73706c6974ull;
constexpr std::uint64_t kPairTag = 0x7061697263616d73ull;
constexpr std::uint64_t kBatchTag = 0x6d6574616261746bull;

std::string camera_list(const std::vector<int>& cams) {
    std::string out;
    for (std::size_t i = 0; i < cams.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(cams[i]);
    }
    return out;
}

}  // namespace

SctSplit build_sct_split(const data::Dataset& dataset, std::uint64_t seed,
                         std::size_t min_images) {
    Rng rng(mix_seed(seed, kSctTag));
    std::set<std::size_t> keep;
    std::size_t dropped = 0;
    for (int identity : dataset.identities()) {
        // Cameras able to supply at least min_images of this identity, sorted.
        std::vector<int> candidates;
        for (int camera : dataset.cameras()) {
            if (dataset.images_of(camera, identity).size() >= min_images)
                candidates.push_back(camera);
        }
        if (candidates.empty()) {
            ++dropped;
            continue;
        }
        const int chosen = candidates[rng.index(candidates.size())];
        for (std::size_t i : dataset.images_of(chosen, identity)) keep.insert(i);
    }
    if (keep.empty()) throw ContractViolation("build_sct_split: empty result");

    std::vector<data::Sample> retained;
    retained.reserve(keep.size());
    for (std::size_t i : keep) retained.push_back(dataset.samples()[i]);
    return {data::Dataset(std::move(retained)), dropped};
}

data::Dataset build_cg_split(const data::Dataset& dataset, std::size_t target_size,
                             std::uint64_t seed) {
    if (target_size > dataset.size())
        throw ContractViolation("build_cg_split: target_size " + std::to_string(target_size) +
                                " exceeds dataset size " + std::to_string(dataset.size()));
    Rng rng(mix_seed(seed, kCgTag));
    std::vector<std::size_t> chosen = rng.sample_without_replacement(dataset.size(), target_size);
    std::sort(chosen.begin(), chosen.end());
    std::vector<data::Sample> retained;
    retained.reserve(chosen.size());
    for (std::size_t i : chosen) retained.push_back(dataset.samples()[i]);
    return data::Dataset(std::move(retained));
}

CameraPair camera_pair_schedule(std::size_t epoch, std::size_t num_cameras, std::uint64_t seed) {
    if (num_cameras < 2) throw ContractViolation("camera_pair_schedule: need >= 2 cameras");
    CameraPair pair;
    pair.mtr_index = epoch % num_cameras;
    Rng rng(mix_seed(seed, kPairTag, epoch));
    std::size_t pick = rng.index(num_cameras - 1);
    pair.mte_index = pick >= pair.mtr_index ? pick + 1 : pick;
    return pair;
}

std::uint64_t batch_draw_seed(std::uint64_t seed, std::size_t epoch, std::size_t batch_index) {
    return mix_seed(mix_seed(seed, kBatchTag, epoch), batch_index);
}

namespace {

// Grow a side's camera set from its scheduled camera to r cameras. `avoid`
// is the other side's scheduled camera; it joins this side only when r
// forces full overlap. `taken` gets priority-excluded so that side sets are
// disjoint whenever r <= N/2 and overlap by exactly 2r - N otherwise.
std::vector<int> grow_camera_set(const std::vector<int>& all_cameras, int scheduled, int avoid,
                                 const std::vector<int>& taken, std::size_t r, Rng& rng) {
    if (r < 1 || r > all_cameras.size())
        throw ContractViolation("sample_meta_batch: r must be in [1, num_cameras]");
    std::vector<int> chosen = {scheduled};
    auto contains = [](const std::vector<int>& v, int x) {
        return std::find(v.begin(), v.end(), x) != v.end();
    };

    std::vector<int> fresh, used;
    for (int cam : all_cameras) {
        if (cam == scheduled || cam == avoid) continue;
        (contains(taken, cam) ? used : fresh).push_back(cam);
    }
    rng.shuffle(fresh);
    rng.shuffle(used);
    while (chosen.size() < r && !fresh.empty()) {
        chosen.push_back(fresh.back());
        fresh.pop_back();
    }
    while (chosen.size() < r && !used.empty()) {
        chosen.push_back(used.back());
        used.pop_back();
    }
    if (chosen.size() < r) chosen.push_back(avoid);
    if (chosen.size() != r) throw ContractViolation("sample_meta_batch: cannot assemble camera set");
    std::sort(chosen.begin(), chosen.end());
    return chosen;
}

struct Eligible {
    int identity;
    int camera;  // the single camera this identity would contribute from
};

// Identities usable on a camera set: those with >= k images on some camera
// of the set. When several cameras qualify, one is drawn for the identity.
std::vector<Eligible> eligible_identities(const data::Dataset& split,
                                          const std::vector<int>& cameras, std::size_t k,
                                          const std::set<int>& excluded, Rng& rng) {
    std::set<int> seen;
    std::vector<Eligible> out;
    for (int camera : cameras) {
        for (int identity : split.identities_on_camera(camera)) seen.insert(identity);
    }
    for (int identity : seen) {
        if (excluded.count(identity)) continue;
        std::vector<int> usable;
        for (int camera : cameras)
            if (split.images_of(camera, identity).size() >= k) usable.push_back(camera);
        if (usable.empty()) continue;
        out.push_back({identity, usable[rng.index(usable.size())]});
    }
    return out;
}

std::vector<std::size_t> draw_side(const data::Dataset& split, const std::vector<int>& cameras,
                                   std::size_t p, std::size_t k, const std::set<int>& excluded,
                                   Rng& rng, std::set<int>& chosen_identities) {
    std::vector<Eligible> pool = eligible_identities(split, cameras, k, excluded, rng);
    if (pool.size() < p) {
        throw InfeasibleSampling("cameras {" + camera_list(cameras) + "}: need " +
                                 std::to_string(p) + " identities with >= " + std::to_string(k) +
                                 " images, found " + std::to_string(pool.size()));
    }
    std::vector<std::size_t> picked = rng.sample_without_replacement(pool.size(), p);
    std::vector<std::size_t> side;
    side.reserve(p * k);
    for (std::size_t pi : picked) {
        const Eligible& e = pool[pi];
        chosen_identities.insert(e.identity);
        const std::vector<std::size_t>& images = split.images_of(e.camera, e.identity);
        std::vector<std::size_t> img_pick = rng.sample_without_replacement(images.size(), k);
        std::sort(img_pick.begin(), img_pick.end());
        for (std::size_t ii : img_pick) side.push_back(images[ii]);
    }
    return side;
}

}  // namespace

MetaBatch sample_meta_batch(const data::Dataset& split, const CameraPair& pair, std::size_t p,
                            std::size_t k, std::size_t r, std::uint64_t draw_seed) {
    if (p < 2 || k < 2) throw ContractViolation("sample_meta_batch: need P >= 2 and K >= 2");
    const std::vector<int>& cams = split.cameras();
    if (pair.mtr_index >= cams.size() || pair.mte_index >= cams.size())
        throw ContractViolation("sample_meta_batch: camera index out of range");
    const int mtr_cam = cams[pair.mtr_index];
    const int mte_cam = cams[pair.mte_index];
    if (mtr_cam == mte_cam) throw ContractViolation("sample_meta_batch: identical camera pair");

    Rng rng(draw_seed);
    MetaBatch batch;
    batch.p = p;
    batch.k = k;
    batch.mtr_cameras = grow_camera_set(cams, mtr_cam, mte_cam, /*taken=*/{}, r, rng);
    batch.mte_cameras = grow_camera_set(cams, mte_cam, mtr_cam, batch.mtr_cameras, r, rng);

    std::set<int> used_identities;
    batch.mtr = draw_side(split, batch.mtr_cameras, p, k, /*excluded=*/{}, rng, used_identities);
    batch.mte = draw_side(split, batch.mte_cameras, p, k, used_identities, rng, used_identities);
    return batch;
}

void validate_meta_batch(const MetaBatch& batch, const data::Dataset& split) {
    auto check_side = [&](const std::vector<std::size_t>& side, const std::vector<int>& cameras,
                          const char* name) {
        if (side.size() != batch.p * batch.k)
            throw ContractViolation(std::string(name) + ": side size != P*K");
        std::map<int, std::size_t> per_identity;
        std::map<int, std::set<int>> identity_cameras;
        for (std::size_t i : side) {
            const data::Sample& s = split.samples()[i];
            ++per_identity[s.identity];
            identity_cameras[s.identity].insert(s.camera);
            if (std::find(cameras.begin(), cameras.end(), s.camera) == cameras.end())
                throw ContractViolation(std::string(name) + ": sample outside the camera set");
        }
        if (per_identity.size() != batch.p)
            throw ContractViolation(std::string(name) + ": identity count != P");
        for (const auto& [identity, count] : per_identity) {
            if (count != batch.k) throw ContractViolation(std::string(name) + ": images != K");
            if (identity_cameras[identity].size() != 1)
                throw ContractViolation(std::string(name) + ": identity spans cameras in batch");
        }
    };
    check_side(batch.mtr, batch.mtr_cameras, "mtr");
    check_side(batch.mte, batch.mte_cameras, "mte");

    std::set<int> mtr_ids, mte_ids;
    for (std::size_t i : batch.mtr) mtr_ids.insert(split.samples()[i].identity);
    for (std::size_t i : batch.mte) mte_ids.insert(split.samples()[i].identity);
    for (int id : mte_ids)
        if (mtr_ids.count(id)) throw ContractViolation("meta batch: identity on both sides");

    const std::size_t n = split.cameras().size();
    const std::size_t r = batch.mtr_cameras.size();
    std::vector<int> overlap;
    std::set_intersection(batch.mtr_cameras.begin(), batch.mtr_cameras.end(),
                          batch.mte_cameras.begin(), batch.mte_cameras.end(),
                          std::back_inserter(overlap));
    if (2 * r <= n && !overlap.empty())
        throw ContractViolation("meta batch: camera sets overlap although r <= N/2");
    if (2 * r > n && overlap.size() != 2 * r - n)
        throw ContractViolation("meta batch: camera overlap != 2r - N");
}

}  // namespace cimn::sampling

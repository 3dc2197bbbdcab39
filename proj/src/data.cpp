#include "jacmatch/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "jacmatch/rng.hpp"

namespace jm::data {

void Dataset::validate() const {
    JM_CHECK(inputs.size() == labels.size(), "dataset '", name, "': ", inputs.size(),
             " inputs vs ", labels.size(), " labels");
    for (std::size_t i = 0; i < labels.size(); ++i) {
        JM_CHECK(labels[i] >= 0 && labels[i] < classes, "dataset '", name, "': label ",
                 labels[i], " out of range at index ", i);
    }
    for (const Tensor& t : inputs) {
        JM_CHECK(t.shape() == inputs[0].shape(), "dataset '", name, "': inhomogeneous shapes");
    }
}

std::vector<int> Dataset::class_counts() const {
    std::vector<int> counts(static_cast<std::size_t>(classes), 0);
    for (int l : labels) ++counts[static_cast<std::size_t>(l)];
    return counts;
}

const char* task_kind_name(TaskKind kind) {
    switch (kind) {
        case TaskKind::two_moons_k: return "two-moons-k";
        case TaskKind::gaussian_blobs: return "gaussian-blobs";
        case TaskKind::checkerboard_2d: return "checkerboard-2d";
    }
    return "?";
}

TaskKind task_kind_from_name(const std::string& name) {
    for (int k = 0; k <= static_cast<int>(TaskKind::checkerboard_2d); ++k) {
        if (name == task_kind_name(static_cast<TaskKind>(k))) return static_cast<TaskKind>(k);
    }
    JM_CHECK_CONFIG(false, "unknown task kind '", name, "'");
    return TaskKind::gaussian_blobs;
}

void SyntheticTask::validate() const {
    JM_CHECK_CONFIG(classes >= 2, "task: classes must be >= 2, got ", classes);
    JM_CHECK_CONFIG(noise >= 0.0, "task: noise must be >= 0, got ", noise);
    JM_CHECK_CONFIG(train_per_class >= 1 && test_per_class >= 1,
                    "task: per-class counts must be >= 1");
    if (kind == TaskKind::gaussian_blobs) {
        JM_CHECK_CONFIG(dim >= 1, "task: blob dimension must be >= 1");
        if (!image_shape.empty()) {
            JM_CHECK_CONFIG(ad::numel_of(image_shape) == dim, "task: image shape ",
                            ad::shape_str(image_shape), " does not hold ", dim, " values");
        }
    } else {
        JM_CHECK_CONFIG(image_shape.empty(), "task: only gaussian-blobs supports image shapes");
    }
}

std::string SyntheticTask::name() const {
    return strcat(task_kind_name(kind), "-k", classes,
                  kind == TaskKind::gaussian_blobs ? strcat("-d", dim) : std::string());
}

Shape SyntheticTask::sample_shape() const {
    if (kind == TaskKind::gaussian_blobs) {
        return image_shape.empty() ? Shape{dim} : image_shape;
    }
    return Shape{2};
}

namespace {

// one labelled sample in flat form
struct Sample {
    std::vector<double> x;
    int label;
};

Sample draw_sample(const SyntheticTask& task, int cls,
                   const std::vector<std::vector<double>>& blob_centers, Rng& rng) {
    Sample s;
    s.label = cls;
    switch (task.kind) {
        case TaskKind::gaussian_blobs: {
            s.x = blob_centers[static_cast<std::size_t>(cls)];
            for (double& v : s.x) v += task.noise * rng.normal();
            break;
        }
        case TaskKind::two_moons_k: {
            // class j is an arc, consecutive arcs interleave like the
            // classic two moons
            const double t = rng.uniform(0.0, M_PI);
            const bool flip = cls % 2 == 1;
            double px = std::cos(t);
            double py = flip ? -std::sin(t) + 0.5 : std::sin(t);
            px += 0.5 * cls;
            s.x = {px + task.noise * rng.normal(), py + task.noise * rng.normal()};
            break;
        }
        case TaskKind::checkerboard_2d: {
            while (true) {
                const double px = rng.uniform(-2.0, 2.0);
                const double py = rng.uniform(-2.0, 2.0);
                const int cell = static_cast<int>(std::floor(px) + std::floor(py) + 8);
                if (cell % task.classes == cls) {
                    s.x = {px + task.noise * rng.normal(), py + task.noise * rng.normal()};
                    break;
                }
            }
            break;
        }
    }
    return s;
}

std::vector<std::vector<double>> make_blob_centers(const SyntheticTask& task, Rng& rng) {
    std::vector<std::vector<double>> centers;
    if (!task.image_shape.empty()) {
        // image-shaped classes are sinusoidal textures with class-distinct
        // orientation and frequency, so convolution + global pooling can
        // actually represent the class signature
        const int ch = task.image_shape[0];
        const int h = task.image_shape[1];
        const int w = task.image_shape[2];
        std::set<std::pair<int, int>> seen;
        while (static_cast<int>(centers.size()) < task.classes) {
            const int fx = 1 + static_cast<int>(rng.uniform_index(3));
            const int fy = static_cast<int>(rng.uniform_index(4));
            if (!seen.insert({fx, fy}).second) continue;
            const double phase = rng.uniform(0.0, 2.0 * M_PI);
            std::vector<double> c(static_cast<std::size_t>(task.dim));
            for (int cc = 0; cc < ch; ++cc) {
                for (int i = 0; i < h; ++i) {
                    for (int j = 0; j < w; ++j) {
                        c[static_cast<std::size_t>((cc * h + i) * w + j)] =
                            std::cos(2.0 * M_PI * (fx * i + fy * j) / h + phase);
                    }
                }
            }
            centers.push_back(std::move(c));
        }
        return centers;
    }
    // flat tasks: distinct random sign patterns
    std::set<std::vector<double>> seen;
    while (static_cast<int>(centers.size()) < task.classes) {
        std::vector<double> c(static_cast<std::size_t>(task.dim));
        for (double& v : c) v = rng.next_u64() % 2 == 0 ? 1.0 : -1.0;
        if (seen.insert(c).second) centers.push_back(std::move(c));
    }
    return centers;
}

Tensor to_tensor(const std::vector<double>& flat, const Shape& shape) {
    return Tensor::from(shape, std::vector<double>(flat.begin(), flat.end()));
}

}  // namespace

std::pair<Dataset, Dataset> generate(const SyntheticTask& task, std::uint64_t seed) {
    task.validate();
    JM_CHECK(task.kind != TaskKind::gaussian_blobs || task.dim < 64 ||
                 task.classes <= (1 << 16),
             "generate: too many classes for distinct centers");

    Rng center_rng(Rng::hash_combine(seed, 0xce17e25));
    std::vector<std::vector<double>> centers;
    if (task.kind == TaskKind::gaussian_blobs) centers = make_blob_centers(task, center_rng);

    const Shape shape = task.sample_shape();
    Dataset train, test;
    train.name = strcat(task.name(), "-train");
    test.name = strcat(task.name(), "-test");
    train.classes = test.classes = task.classes;
    train.seed = test.seed = seed;

    for (int cls = 0; cls < task.classes; ++cls) {
        Rng rng(Rng::hash_combine(seed, static_cast<std::uint64_t>(cls) + 1));
        for (int i = 0; i < task.train_per_class; ++i) {
            Sample s = draw_sample(task, cls, centers, rng);
            train.inputs.push_back(to_tensor(s.x, shape));
            train.labels.push_back(s.label);
        }
        for (int i = 0; i < task.test_per_class; ++i) {
            Sample s = draw_sample(task, cls, centers, rng);
            test.inputs.push_back(to_tensor(s.x, shape));
            test.labels.push_back(s.label);
        }
    }
    train.validate();
    test.validate();
    return {std::move(train), std::move(test)};
}

Dataset subset_per_class(const Dataset& ds, int n_per_class, std::uint64_t seed) {
    ds.validate();
    JM_CHECK(n_per_class >= 1, "subset_per_class: n must be >= 1");
    std::vector<std::vector<int>> by_class(static_cast<std::size_t>(ds.classes));
    for (std::size_t i = 0; i < ds.labels.size(); ++i) {
        by_class[static_cast<std::size_t>(ds.labels[i])].push_back(static_cast<int>(i));
    }
    for (int c = 0; c < ds.classes; ++c) {
        JM_CHECK(static_cast<int>(by_class[static_cast<std::size_t>(c)].size()) >= n_per_class,
                 "subset_per_class: class ", c, " has only ",
                 by_class[static_cast<std::size_t>(c)].size(), " examples, need ", n_per_class);
    }
    Dataset out;
    out.name = strcat(ds.name, "-n", n_per_class);
    out.classes = ds.classes;
    out.mean = ds.mean;
    out.stdev = ds.stdev;
    out.normalized = ds.normalized;
    out.seed = seed;
    for (int c = 0; c < ds.classes; ++c) {
        auto& idx = by_class[static_cast<std::size_t>(c)];
        Rng rng(Rng::hash_combine(seed, static_cast<std::uint64_t>(c)));
        // Fisher-Yates prefix: the first n entries are a uniform sample
        // without replacement
        for (int i = 0; i < n_per_class; ++i) {
            const std::size_t j =
                static_cast<std::size_t>(i) +
                rng.uniform_index(static_cast<std::uint64_t>(idx.size() - static_cast<std::size_t>(i)));
            std::swap(idx[static_cast<std::size_t>(i)], idx[j]);
            out.inputs.push_back(ds.inputs[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])]);
            out.labels.push_back(c);
        }
    }
    return out;
}

Dataset load_image_binary(const std::string& path, const BinaryLayout& layout) {
    JM_CHECK(layout.classes >= 1 && layout.channels >= 1 && layout.height >= 1 &&
                 layout.width >= 1,
             "load_image_binary: invalid layout descriptor");
    std::ifstream is(path, std::ios::binary);
    JM_CHECK(is.good(), "load_image_binary: cannot open '", path, "'");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                     std::istreambuf_iterator<char>());

    const std::size_t pixels =
        static_cast<std::size_t>(layout.channels) * layout.height * layout.width;
    const std::size_t record = 1 + pixels;
    JM_CHECK(bytes.size() % record == 0, "load_image_binary: truncated file '", path,
             "': trailing partial record at byte offset ", (bytes.size() / record) * record);

    Dataset ds;
    ds.name = path;
    ds.classes = layout.classes;
    const Shape shape = {layout.channels, layout.height, layout.width};
    for (std::size_t off = 0; off < bytes.size(); off += record) {
        const int label = bytes[off];
        JM_CHECK(label < layout.classes, "load_image_binary: label byte ", label,
                 " >= classes ", layout.classes, " at byte offset ", off);
        std::vector<double> vals(pixels);
        for (std::size_t p = 0; p < pixels; ++p) {
            vals[p] = static_cast<double>(bytes[off + 1 + p]) / 255.0;
        }
        ds.inputs.push_back(Tensor::from(shape, std::move(vals)));
        ds.labels.push_back(label);
    }
    if (!layout.mean.empty()) {
        JM_CHECK(static_cast<int>(layout.mean.size()) == layout.channels &&
                     layout.stdev.size() == layout.mean.size(),
                 "load_image_binary: stats must have one entry per channel");
        ds.mean = layout.mean;
        ds.stdev = layout.stdev;
    } else if (!ds.inputs.empty()) {
        compute_stats(ds);
    }
    if (!ds.inputs.empty()) normalize(ds);
    return ds;
}

Dataset add_input_noise(const Dataset& ds, double sigma, std::uint64_t seed) {
    JM_CHECK(sigma >= 0.0, "add_input_noise: sigma must be >= 0");
    Dataset out = ds;
    out.seed = seed;
    if (sigma == 0.0) return out;
    for (std::size_t i = 0; i < out.inputs.size(); ++i) {
        Rng rng(Rng::hash_combine(seed, static_cast<std::uint64_t>(i)));
        Tensor t = out.inputs[i].clone();
        for (double& v : t.mutable_data()) v += sigma * rng.normal();
        out.inputs[i] = t;
    }
    return out;
}

void compute_stats(Dataset& ds) {
    JM_CHECK(!ds.inputs.empty(), "compute_stats: empty dataset");
    const Shape& shape = ds.inputs[0].shape();
    const int channels = shape.size() == 3 ? shape[0] : 1;
    const std::size_t plane = static_cast<std::size_t>(ds.inputs[0].numel()) /
                              static_cast<std::size_t>(channels);
    ds.mean.assign(static_cast<std::size_t>(channels), 0.0);
    ds.stdev.assign(static_cast<std::size_t>(channels), 0.0);
    const double n = static_cast<double>(ds.inputs.size() * plane);
    for (const Tensor& t : ds.inputs) {
        for (int c = 0; c < channels; ++c) {
            for (std::size_t p = 0; p < plane; ++p) {
                ds.mean[static_cast<std::size_t>(c)] += t.data()[c * plane + p];
            }
        }
    }
    for (double& m : ds.mean) m /= n;
    for (const Tensor& t : ds.inputs) {
        for (int c = 0; c < channels; ++c) {
            for (std::size_t p = 0; p < plane; ++p) {
                const double d = t.data()[c * plane + p] - ds.mean[static_cast<std::size_t>(c)];
                ds.stdev[static_cast<std::size_t>(c)] += d * d;
            }
        }
    }
    for (double& s : ds.stdev) s = std::max(std::sqrt(s / n), 1e-12);
}

void normalize(Dataset& ds) {
    JM_CHECK(!ds.normalized, "normalize: dataset '", ds.name, "' is already normalized");
    if (ds.mean.empty()) compute_stats(ds);
    const Shape& shape = ds.inputs[0].shape();
    const int channels = shape.size() == 3 ? shape[0] : 1;
    const std::size_t plane = static_cast<std::size_t>(ds.inputs[0].numel()) /
                              static_cast<std::size_t>(channels);
    for (Tensor& t : ds.inputs) {
        Tensor u = t.clone();
        auto d = u.mutable_data();
        for (int c = 0; c < channels; ++c) {
            for (std::size_t p = 0; p < plane; ++p) {
                d[c * plane + p] = (d[c * plane + p] - ds.mean[static_cast<std::size_t>(c)]) /
                                   ds.stdev[static_cast<std::size_t>(c)];
            }
        }
        t = u;
    }
    ds.normalized = true;
}

nlohmann::json manifest(const Dataset& ds) {
    nlohmann::json j;
    j["name"] = ds.name;
    j["count"] = ds.size();
    j["classes"] = ds.classes;
    j["class_counts"] = ds.class_counts();
    j["mean"] = ds.mean;
    j["stdev"] = ds.stdev;
    j["normalized"] = ds.normalized;
    j["seed"] = ds.seed;
    if (!ds.inputs.empty()) j["input_shape"] = ds.inputs[0].shape();
    return j;
}

}  // namespace jm::data

#include "parapoint/networks.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <cstring>
#include <fstream>

namespace parapoint {

namespace {

constexpr char kMagic[5] = {'P', 'P', 'N', 'T', '1'};
constexpr int kCheckpointVersion = 1;

Eigen::MatrixXd uniform_matrix(int rows, int cols, double limit, Rng& rng) {
    Eigen::MatrixXd m(rows, cols);
    for (int c = 0; c < cols; ++c)
        for (int r = 0; r < rows; ++r) m(r, c) = rng.uniform(-limit, limit);
    return m;
}

inline Eigen::MatrixXd leaky(const Eigen::MatrixXd& x) {
    return x.array().max(kLeakySlope * x.array()).matrix();
}

inline Eigen::ArrayXXd leaky_mask(const Eigen::MatrixXd& pre) {
    return (pre.array() >= 0.0)
        .select(Eigen::ArrayXXd::Ones(pre.rows(), pre.cols()),
                Eigen::ArrayXXd::Constant(pre.rows(), pre.cols(), kLeakySlope));
}

}  // namespace

MlpStack MlpStack::create(int in_dim, int out_dim, Rng& rng) {
    MlpStack s;
    std::vector<int> dims;
    dims.push_back(in_dim);
    dims.insert(dims.end(), kHiddenDims.begin(), kHiddenDims.end());
    dims.push_back(out_dim);
    for (size_t i = 0; i + 1 < dims.size(); ++i) {
        const double limit = 1.0 / std::sqrt(static_cast<double>(dims[i]));
        s.weights.push_back(uniform_matrix(dims[i + 1], dims[i], limit, rng));
        s.biases.push_back(uniform_matrix(dims[i + 1], 1, limit, rng));
    }
    return s;
}

void MlpStack::zero_last_layer() {
    weights.back().setZero();
    biases.back().setZero();
}

Eigen::MatrixXd MlpStack::forward(const Eigen::MatrixXd& x) const {
    Eigen::MatrixXd h = x;
    for (size_t i = 0; i < weights.size(); ++i) {
        Eigen::MatrixXd z;
        z.noalias() = weights[i] * h;
        z.colwise() += biases[i].col(0);
        h = (i + 1 < weights.size()) ? leaky(z) : std::move(z);
    }
    return h;
}

Dual2 MlpStack::forward(const Dual2& x) const {
    Dual2 d = x;
    for (size_t i = 0; i < weights.size(); ++i) {
        Eigen::VectorXd z = weights[i] * d.value + biases[i].col(0);
        Eigen::MatrixXd t = weights[i] * d.tangent;
        if (i + 1 < weights.size()) {
            const Eigen::VectorXd mask =
                (z.array() >= 0.0)
                    .select(Eigen::ArrayXd::Ones(z.size()),
                            Eigen::ArrayXd::Constant(z.size(), kLeakySlope))
                    .matrix();
            d.value = (z.array().max(kLeakySlope * z.array())).matrix();
            d.tangent = mask.asDiagonal() * t;
        } else {
            d.value = std::move(z);
            d.tangent = std::move(t);
        }
    }
    return d;
}

void MlpStack::forward_tangent(const Eigen::MatrixXd& x, const Eigen::MatrixXd& tu,
                               const Eigen::MatrixXd& tv, Eigen::MatrixXd& y,
                               Eigen::MatrixXd& yu, Eigen::MatrixXd& yv) const {
    y = x;
    yu = tu;
    yv = tv;
    for (size_t i = 0; i < weights.size(); ++i) {
        Eigen::MatrixXd z;
        z.noalias() = weights[i] * y;
        z.colwise() += biases[i].col(0);
        Eigen::MatrixXd zu = weights[i] * yu;
        Eigen::MatrixXd zv = weights[i] * yv;
        if (i + 1 < weights.size()) {
            const Eigen::ArrayXXd mask = leaky_mask(z);
            y = leaky(z);
            yu = (mask * zu.array()).matrix();
            yv = (mask * zv.array()).matrix();
        } else {
            y = std::move(z);
            yu = std::move(zu);
            yv = std::move(zv);
        }
    }
}

std::vector<MlpStack*> SubNetworkSet::stacks() {
    return {&deform_embed, &deform_head, &cut_embed, &cut_head, &stitch, &wrap, &unwrap};
}

std::vector<const MlpStack*> SubNetworkSet::stacks() const {
    return {&deform_embed, &deform_head, &cut_embed, &cut_head, &stitch, &wrap, &unwrap};
}

std::vector<Eigen::MatrixXd*> SubNetworkSet::parameters() {
    std::vector<Eigen::MatrixXd*> out;
    for (MlpStack* s : stacks())
        for (size_t i = 0; i < s->weights.size(); ++i) {
            out.push_back(&s->weights[i]);
            out.push_back(&s->biases[i]);
        }
    return out;
}

std::vector<const Eigen::MatrixXd*> SubNetworkSet::parameters() const {
    std::vector<const Eigen::MatrixXd*> out;
    for (const MlpStack* s : stacks())
        for (size_t i = 0; i < s->weights.size(); ++i) {
            out.push_back(&s->weights[i]);
            out.push_back(&s->biases[i]);
        }
    return out;
}

Points2 SubNetworkSet::deform_forward(const Points2& x) const {
    Eigen::MatrixXd embedded = deform_embed.forward(x);
    Eigen::MatrixXd cat(embedded.rows() + x.rows(), x.cols());
    cat.topRows(embedded.rows()) = embedded;
    cat.bottomRows(x.rows()) = x;
    return deform_head.forward(cat) + x;
}

Points3 SubNetworkSet::cut_forward(const Points3& x) const {
    Eigen::MatrixXd embedded = cut_embed.forward(x);
    Eigen::MatrixXd cat(embedded.rows() + x.rows(), x.cols());
    cat.topRows(embedded.rows()) = embedded;
    cat.bottomRows(x.rows()) = x;
    return cut_head.forward(cat) + x;
}

Points3 SubNetworkSet::stitch_forward(const Points3& x) const { return stitch.forward(x); }
Points3 SubNetworkSet::wrap_forward(const Points2& x) const { return wrap.forward(x); }
Points2 SubNetworkSet::unwrap_forward(const Points3& x) const { return unwrap.forward(x); }

SubNetworkSet init_params(uint64_t seed) {
    Rng rng(seed);
    SubNetworkSet net;
    net.seed = seed;
    net.deform_embed = MlpStack::create(2, kEmbedDim, rng);
    net.deform_head = MlpStack::create(kEmbedDim + 2, 2, rng);
    net.cut_embed = MlpStack::create(3, kEmbedDim, rng);
    net.cut_head = MlpStack::create(kEmbedDim + 3, 3, rng);
    net.stitch = MlpStack::create(3, 3, rng);
    net.wrap = MlpStack::create(2, 3, rng);
    net.unwrap = MlpStack::create(3, 2, rng);
    net.deform_head.zero_last_layer();
    net.cut_head.zero_last_layer();
    return net;
}

NetBinding bind_network(Tape& tape, const SubNetworkSet& net) {
    NetBinding bind;
    for (const MlpStack* s : net.stacks()) {
        std::vector<NodeId> ws, bs;
        for (size_t i = 0; i < s->weights.size(); ++i) {
            ws.push_back(tape.param(s->weights[i]));
            bs.push_back(tape.param(s->biases[i]));
            bind.flat.push_back(ws.back());
            bind.flat.push_back(bs.back());
        }
        bind.w.push_back(std::move(ws));
        bind.b.push_back(std::move(bs));
    }
    return bind;
}

NodeId record_stack(Tape& tape, const NetBinding& bind, int stack_index, NodeId x) {
    const auto& ws = bind.w[stack_index];
    const auto& bs = bind.b[stack_index];
    NodeId h = x;
    for (size_t i = 0; i < ws.size(); ++i) {
        const NodeId z = tape.affine(ws[i], bs[i], h);
        h = (i + 1 < ws.size()) ? tape.leaky_relu(z, kLeakySlope) : z;
    }
    return h;
}

NodeId record_deform(Tape& tape, const NetBinding& bind, NodeId x) {
    const NodeId embedded = record_stack(tape, bind, kDeformEmbed, x);
    const NodeId cat = tape.concat_rows(embedded, x);
    return tape.add(record_stack(tape, bind, kDeformHead, cat), x);
}

NodeId record_cut(Tape& tape, const NetBinding& bind, NodeId x) {
    const NodeId embedded = record_stack(tape, bind, kCutEmbed, x);
    const NodeId cat = tape.concat_rows(embedded, x);
    return tape.add(record_stack(tape, bind, kCutHead, cat), x);
}

// ---------------------------------------------------------------------------
// Checkpoint IO

namespace {

const char* const kStackNames[] = {"deform_embed", "deform_head", "cut_embed",
                                   "cut_head",     "stitch",      "wrap",
                                   "unwrap"};

void write_matrix(std::ofstream& os, const Eigen::MatrixXd& m) {
    os.write(reinterpret_cast<const char*>(m.data()),
             static_cast<std::streamsize>(sizeof(double) * m.size()));
}

void read_matrix(std::ifstream& is, Eigen::MatrixXd& m) {
    is.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * m.size()));
    if (!is) throw CheckpointError("checkpoint: truncated parameter payload");
}

}  // namespace

void save_checkpoint(const SubNetworkSet& net, const std::filesystem::path& path,
                     const CheckpointExtras& extras) {
    nlohmann::json header;
    header["version"] = kCheckpointVersion;
    header["arch"] = {{"hidden", kHiddenDims}, {"embed_dim", kEmbedDim}, {"slope", kLeakySlope}};
    header["seed"] = net.seed;
    header["normalization"] = {
        {"center", {net.normalization.center.x(), net.normalization.center.y(),
                    net.normalization.center.z()}},
        {"scale", net.normalization.scale}};

    nlohmann::json params = nlohmann::json::array();
    const auto stacks = net.stacks();
    for (size_t s = 0; s < stacks.size(); ++s) {
        for (size_t i = 0; i < stacks[s]->weights.size(); ++i) {
            params.push_back({{"name", std::string(kStackNames[s]) + ".W" + std::to_string(i)},
                              {"rows", stacks[s]->weights[i].rows()},
                              {"cols", stacks[s]->weights[i].cols()}});
            params.push_back({{"name", std::string(kStackNames[s]) + ".b" + std::to_string(i)},
                              {"rows", stacks[s]->biases[i].rows()},
                              {"cols", stacks[s]->biases[i].cols()}});
        }
    }
    header["params"] = std::move(params);

    if (extras.meta) header["train_state"] = *extras.meta;
    if (extras.buffers) {
        nlohmann::json bufs = nlohmann::json::array();
        for (const auto& m : *extras.buffers)
            bufs.push_back({{"rows", m.rows()}, {"cols", m.cols()}});
        header["extra_buffers"] = std::move(bufs);
    }

    const std::string htext = header.dump();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw CheckpointError("checkpoint: cannot open for writing: " + path.string());
    os.write(kMagic, sizeof(kMagic));
    const uint32_t hlen = static_cast<uint32_t>(htext.size());
    unsigned char lenbuf[4] = {static_cast<unsigned char>(hlen & 0xff),
                               static_cast<unsigned char>((hlen >> 8) & 0xff),
                               static_cast<unsigned char>((hlen >> 16) & 0xff),
                               static_cast<unsigned char>((hlen >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(lenbuf), 4);
    os.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    for (const Eigen::MatrixXd* p : net.parameters()) write_matrix(os, *p);
    if (extras.buffers)
        for (const auto& m : *extras.buffers) write_matrix(os, m);
    if (!os) throw CheckpointError("checkpoint: write failure: " + path.string());
}

SubNetworkSet load_checkpoint(const std::filesystem::path& path,
                              const CheckpointExtras& extras) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("checkpoint: cannot open: " + path.string());
    char magic[5];
    is.read(magic, 5);
    if (!is || std::memcmp(magic, kMagic, 5) != 0)
        throw CheckpointError("checkpoint: bad magic bytes (not a PPNT1 file)");
    unsigned char lenbuf[4];
    is.read(reinterpret_cast<char*>(lenbuf), 4);
    if (!is) throw CheckpointError("checkpoint: truncated header length");
    const uint32_t hlen = static_cast<uint32_t>(lenbuf[0]) |
                          (static_cast<uint32_t>(lenbuf[1]) << 8) |
                          (static_cast<uint32_t>(lenbuf[2]) << 16) |
                          (static_cast<uint32_t>(lenbuf[3]) << 24);
    std::string htext(hlen, '\0');
    is.read(htext.data(), hlen);
    if (!is) throw CheckpointError("checkpoint: truncated header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(htext);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("checkpoint: corrupt header: ") + e.what());
    }
    if (header.value("version", -1) != kCheckpointVersion)
        throw CheckpointError("checkpoint: unsupported version");
    const auto hidden = header.at("arch").at("hidden").get<std::vector<int>>();
    if (hidden != kHiddenDims)
        throw CheckpointError("checkpoint: architecture mismatch (hidden dims)");
    if (header.at("arch").at("embed_dim").get<int>() != kEmbedDim)
        throw CheckpointError("checkpoint: architecture mismatch (embed dim)");

    SubNetworkSet net = init_params(header.value("seed", uint64_t{0}));
    const auto& norm = header.at("normalization");
    net.normalization.center = Eigen::Vector3d(norm.at("center")[0].get<double>(),
                                               norm.at("center")[1].get<double>(),
                                               norm.at("center")[2].get<double>());
    net.normalization.scale = norm.at("scale").get<double>();

    const auto ptable = header.at("params");
    auto ps = net.parameters();
    if (ptable.size() != ps.size())
        throw CheckpointError("checkpoint: parameter table size mismatch");
    for (size_t i = 0; i < ps.size(); ++i) {
        if (ptable[i].at("rows").get<Eigen::Index>() != ps[i]->rows() ||
            ptable[i].at("cols").get<Eigen::Index>() != ps[i]->cols())
            throw CheckpointError("checkpoint: parameter shape mismatch at index " +
                                  std::to_string(i));
        read_matrix(is, *ps[i]);
    }

    if (extras.meta) {
        *extras.meta = header.contains("train_state") ? header["train_state"]
                                                      : nlohmann::json();
    }
    if (extras.buffers) {
        extras.buffers->clear();
        if (header.contains("extra_buffers")) {
            for (const auto& d : header["extra_buffers"]) {
                Eigen::MatrixXd m(d.at("rows").get<Eigen::Index>(),
                                  d.at("cols").get<Eigen::Index>());
                read_matrix(is, m);
                extras.buffers->push_back(std::move(m));
            }
        }
    }
    return net;
}

}  // namespace parapoint

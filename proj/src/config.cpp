#include <fstream>
#include <sstream>

#include "dtql/errors.hpp"
#include "dtql/trainer.hpp"

namespace dtql {

std::string regularizer_name(Regularizer r) {
    switch (r) {
        case Regularizer::kTrustRegion: return "tr";
        case Regularizer::kKl: return "kl";
        case Regularizer::kSds: return "sds";
    }
    return "?";
}

std::string policy_kind_name(PolicyKind k) {
    return k == PolicyKind::kGaussian ? "gaussian" : "implicit";
}

void TrainConfig::validate() const {
    if (alpha <= 0.0) throw config_error("config: alpha must be positive");
    if (!(tau > 0.0 && tau < 1.0)) throw config_error("config: tau must be in (0,1)");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw config_error("config: gamma must be in (0,1]");
    if (!(rho >= 0.0 && rho < 1.0)) throw config_error("config: rho must be in [0,1)");
    if (epochs < 1) throw config_error("config: epochs must be >= 1");
    if (pretrain_epochs < 0) throw config_error("config: pretrain_epochs must be >= 0");
    if (batch_size < 1) throw config_error("config: batch_size must be >= 1");
    if (lr <= 0.0) throw config_error("config: lr must be positive");
    if (regularizer == Regularizer::kKl && policy_kind != PolicyKind::kImplicit)
        throw config_error("config: the kl arm requires policy_kind=implicit");
    if (entropy_enabled && policy_kind != PolicyKind::kGaussian)
        throw config_error("config: the entropy term requires a gaussian policy");
    if (scenario != "chain8") scenario_by_name(scenario);  // throws on unknown
}

namespace {
bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw config_error("config: bad boolean for " + key + ": " + v);
}
}  // namespace

TrainConfig parse_config_text(const std::string& text) {
    TrainConfig cfg;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto trim = [](std::string s) {
            size_t b = s.find_first_not_of(" \t\r");
            size_t e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw config_error("config: line " + std::to_string(lineno) + " is not key=value");
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        if (key == "scenario") cfg.scenario = val;
        else if (key == "regularizer") {
            if (val == "tr") cfg.regularizer = Regularizer::kTrustRegion;
            else if (val == "kl") cfg.regularizer = Regularizer::kKl;
            else if (val == "sds") cfg.regularizer = Regularizer::kSds;
            else throw config_error("config: regularizer must be tr|kl|sds");
        } else if (key == "policy_kind") {
            if (val == "gaussian") cfg.policy_kind = PolicyKind::kGaussian;
            else if (val == "implicit") cfg.policy_kind = PolicyKind::kImplicit;
            else throw config_error("config: policy_kind must be gaussian|implicit");
        } else if (key == "entropy_mode") {
            if (val == "data") cfg.entropy_mode = EntropyMode::kDataCrossEntropy;
            else if (val == "policy") cfg.entropy_mode = EntropyMode::kPolicyEntropy;
            else throw config_error("config: entropy_mode must be data|policy");
        } else if (key == "alpha") cfg.alpha = std::stod(val);
        else if (key == "tau") cfg.tau = std::stod(val);
        else if (key == "gamma") cfg.gamma = std::stod(val);
        else if (key == "rho") cfg.rho = std::stod(val);
        else if (key == "entropy_enabled") cfg.entropy_enabled = parse_bool(val, key);
        else if (key == "entropy_coef") cfg.entropy_coef = std::stod(val);
        else if (key == "q_term") cfg.q_term = parse_bool(val, key);
        else if (key == "lr") cfg.lr = std::stod(val);
        else if (key == "lr_decay") cfg.lr_decay = parse_bool(val, key);
        else if (key == "batch_size") cfg.batch_size = std::stoi(val);
        else if (key == "pretrain_epochs") cfg.pretrain_epochs = std::stoi(val);
        else if (key == "epochs") cfg.epochs = std::stoi(val);
        else if (key == "seed") cfg.seed = std::stoull(val);
        else if (key == "output_dir") cfg.output_dir = val;
        else if (key == "eval_samples") cfg.eval_samples = std::stoi(val);
        else if (key == "data_n") cfg.data_n = std::stoi(val);
        else if (key == "dataset") cfg.dataset_path = val;
        else throw config_error("config: unknown key '" + key + "'");
    }
    cfg.validate();
    return cfg;
}

TrainConfig parse_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw io_error("config: cannot open " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_config_text(ss.str());
}

std::string config_to_text(const TrainConfig& c) {
    std::ostringstream os;
    os << "scenario=" << c.scenario << "\n"
       << "regularizer=" << regularizer_name(c.regularizer) << "\n"
       << "policy_kind=" << policy_kind_name(c.policy_kind) << "\n"
       << "alpha=" << c.alpha << "\n"
       << "tau=" << c.tau << "\n"
       << "gamma=" << c.gamma << "\n"
       << "rho=" << c.rho << "\n"
       << "entropy_enabled=" << (c.entropy_enabled ? "true" : "false") << "\n"
       << "entropy_coef=" << c.entropy_coef << "\n"
       << "entropy_mode=" << (c.entropy_mode == EntropyMode::kDataCrossEntropy ? "data" : "policy")
       << "\n"
       << "q_term=" << (c.q_term ? "true" : "false") << "\n"
       << "lr=" << c.lr << "\n"
       << "lr_decay=" << (c.lr_decay ? "true" : "false") << "\n"
       << "batch_size=" << c.batch_size << "\n"
       << "pretrain_epochs=" << c.pretrain_epochs << "\n"
       << "epochs=" << c.epochs << "\n"
       << "seed=" << c.seed << "\n"
       << "eval_samples=" << c.eval_samples << "\n"
       << "data_n=" << c.data_n << "\n";
    if (!c.output_dir.empty()) os << "output_dir=" << c.output_dir << "\n";
    if (!c.dataset_path.empty()) os << "dataset=" << c.dataset_path << "\n";
    return os.str();
}

}  // namespace dtql

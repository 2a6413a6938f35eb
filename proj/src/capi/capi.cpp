#include "avdit/avdit.h"

#include <fstream>
#include <string>

#include "io/runconfig.hpp"
#include "train/trainer.hpp"

using namespace avdit;

struct avdit_config {
    RunConfig rc;
};

namespace {

thread_local std::string g_last_error;
thread_local std::string g_text;

avdit_status fail(avdit_status code, const std::string& msg) {
    g_last_error = msg;
    return code;
}

// Exceptions map onto status codes the same way the CLI maps onto exit codes.
template <class F>
avdit_status guarded(F&& f) {
    try {
        return f();
    } catch (const ConfigError& e) {
        return fail(AVDIT_ERR_CONFIG, e.what());
    } catch (const ContractError& e) {
        return fail(AVDIT_ERR_CONFIG, e.what());
    } catch (const ShapeError& e) {
        return fail(AVDIT_ERR_CONFIG, e.what());
    } catch (const Error& e) {
        return fail(AVDIT_ERR_RUNTIME, e.what());
    } catch (const std::exception& e) {
        return fail(AVDIT_ERR_RUNTIME, e.what());
    }
}

}  // namespace

extern "C" {

const char* avdit_version(void) { return "avdit 1.0.0 (container format 1)"; }

const char* avdit_last_error(void) { return g_last_error.c_str(); }

avdit_status avdit_config_open(const char* path, avdit_config** out) {
    if (!path || !out) return fail(AVDIT_ERR_CONFIG, "config_open: null argument");
    return guarded([&]() {
        auto* cfg = new avdit_config{RunConfig::parse_file(path)};
        *out = cfg;
        return AVDIT_OK;
    });
}

avdit_status avdit_config_create(avdit_config** out) {
    if (!out) return fail(AVDIT_ERR_CONFIG, "config_create: null argument");
    *out = new avdit_config{};
    return AVDIT_OK;
}

avdit_status avdit_config_set(avdit_config* cfg, const char* key, const char* value) {
    if (!cfg || !key || !value) return fail(AVDIT_ERR_CONFIG, "config_set: null argument");
    return guarded([&]() {
        cfg->rc.set(key, value);
        return AVDIT_OK;
    });
}

const char* avdit_config_get(const avdit_config* cfg, const char* key) {
    if (!cfg || !key || !cfg->rc.has_key(key)) return nullptr;
    g_text = cfg->rc.get_string(key);
    return g_text.c_str();
}

avdit_status avdit_config_serialize(const avdit_config* cfg, const char** out_text) {
    if (!cfg || !out_text) return fail(AVDIT_ERR_CONFIG, "config_serialize: null argument");
    g_text = cfg->rc.serialize();
    *out_text = g_text.c_str();
    return AVDIT_OK;
}

void avdit_config_close(avdit_config* cfg) { delete cfg; }

avdit_status avdit_train(const avdit_config* cfg, const char* out_dir, int verbose) {
    if (!cfg || !out_dir) return fail(AVDIT_ERR_CONFIG, "train: null argument");
    return guarded([&]() {
        train_run(cfg->rc, out_dir, nullptr, verbose != 0);
        return AVDIT_OK;
    });
}

avdit_status avdit_sample(const char* checkpoint_path, const char* out_dir, int64_t n,
                          int32_t steps, uint64_t seed, int verbose) {
    if (!checkpoint_path || !out_dir) return fail(AVDIT_ERR_CONFIG, "sample: null argument");
    return guarded([&]() {
        sample_run(checkpoint_path, out_dir, n, steps, seed, verbose != 0);
        return AVDIT_OK;
    });
}

avdit_status avdit_params_report(const avdit_config* cfg, const char** out_text) {
    if (!cfg || !out_text) return fail(AVDIT_ERR_CONFIG, "params_report: null argument");
    return guarded([&]() {
        g_text = params_report(cfg->rc);
        *out_text = g_text.c_str();
        return AVDIT_OK;
    });
}

avdit_status avdit_gradcheck(const avdit_config* cfg, const char** out_report) {
    if (!cfg || !out_report) return fail(AVDIT_ERR_CONFIG, "gradcheck: null argument");
    return guarded([&]() {
        auto rows = gradcheck_suite(cfg->rc);
        g_text = gradcheck_report(rows);
        *out_report = g_text.c_str();
        if (!gradcheck_all_pass(rows))
            return fail(AVDIT_ERR_CHECK, "gradcheck: at least one module failed");
        return AVDIT_OK;
    });
}

avdit_status avdit_ablate(const avdit_config* cfg, const char* out_csv, int verbose,
                          const char** out_report) {
    if (!cfg || !out_csv) return fail(AVDIT_ERR_CONFIG, "ablate: null argument");
    return guarded([&]() {
        auto rows = ablate_run(cfg->rc, verbose != 0);
        g_text = ablate_csv(rows);
        {
            std::ofstream f(out_csv, std::ios::trunc);
            if (!f) throw IoError(std::string("cannot open for write: ") + out_csv);
            f << g_text;
        }
        if (out_report) *out_report = g_text.c_str();
        return AVDIT_OK;
    });
}

}  // extern "C"

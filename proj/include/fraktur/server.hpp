#pragma once

#include <memory>
#include <string>
#include <variant>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "fraktur/error.hpp"
#include "fraktur/job.hpp"

namespace fraktur {

inline int http_status(ErrorCode code) {
    switch (code) {
    case ErrorCode::NotFound: return 404;
    case ErrorCode::IllegalTransition:
    case ErrorCode::NothingToExport:
    case ErrorCode::EmptyInput: return 409;
    case ErrorCode::ValidationFailed:
    case ErrorCode::SchemaViolation:
    case ErrorCode::SubsetViolation:
    case ErrorCode::MalformedPayload:
    case ErrorCode::XmlSyntax:
    case ErrorCode::SchemaMismatch:
    case ErrorCode::UnreadableScan:
    case ErrorCode::MissingPromptAsset: return 422;
    case ErrorCode::InvalidArgument:
    case ErrorCode::InvalidConfig: return 400;
    default: return 500;
    }
}

inline nlohmann::json error_json(const Error& err) {
    return {{"code", code_name(err.code())}, {"message", err.what()}, {"violations", err.details()}};
}

inline nlohmann::json content_json(const PageContent& c) {
    if (const auto* doc = std::get_if<TeiDocument>(&c)) return *doc;
    return std::get<std::vector<DictionaryEntry>>(c);
}

/// JSON API over a job store, for the review front end and scripts.
class ApiServer {
public:
    explicit ApiServer(JobStore& store) : store_(store) { routes(); }

    /// Binds and serves until stop(); port 0 picks a free port.
    bool listen(const std::string& host, int port) {
        if (port == 0) {
            port_ = server_.bind_to_any_port(host);
        } else {
            port_ = server_.bind_to_port(host, port) ? port : -1;
        }
        if (port_ < 0) return false;
        return server_.listen_after_bind();
    }

    /// Binds without serving; call serve() afterwards (for example from a
    /// thread).
    int bind(const std::string& host, int port = 0) {
        port_ = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
        return port_;
    }
    bool serve() { return server_.listen_after_bind(); }
    void stop() { server_.stop(); }
    void wait_until_ready() { server_.wait_until_ready(); }
    int port() const { return port_; }

private:
    using Req = httplib::Request;
    using Res = httplib::Response;

    template <class F>
    auto guarded(F f) {
        return [f](const Req& req, Res& res) {
            try {
                f(req, res);
            } catch (const Error& err) {
                res.status = http_status(err.code());
                res.set_content(error_json(err).dump(), "application/json");
            } catch (const nlohmann::json::exception& err) {
                res.status = 400;
                res.set_content(error_json(Error(ErrorCode::MalformedPayload, err.what())).dump(), "application/json");
            } catch (const std::exception& err) {
                res.status = 500;
                res.set_content(error_json(Error(ErrorCode::IoError, err.what())).dump(), "application/json");
            }
        };
    }

    static void json(Res& res, const nlohmann::json& body, int status = 200) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    }

    static int page_number(const std::string& s) {
        try {
            return std::stoi(s);
        } catch (const std::exception&) {
            throw Error(ErrorCode::NotFound, "no page '" + s + "'");
        }
    }

    nlohmann::json page_json(const std::string& job_id, int n) const {
        const Job job = store_.load(job_id);
        nlohmann::json out = job.page(n);
        const auto content = store_.content(job_id, n);
        out["schema"] = schema_name(job.config.schema);
        out["entries"] = content ? content_json(*content) : nlohmann::json(nullptr);
        out["corrected"] = store_.corrected(job_id, n).has_value();
        nlohmann::json tiles = nlohmann::json::array();
        for (const auto& [label, path] : store_.tiles(job_id, n)) {
            tiles.push_back({{"label", label},
                             {"url", "/api/jobs/" + job_id + "/pages/" + std::to_string(n) + "/tiles/" + label + ".png"}});
        }
        out["tiles"] = tiles;
        return out;
    }

    void routes() {
        server_.Get("/api/jobs", guarded([this](const Req&, Res& res) {
                        nlohmann::json jobs = nlohmann::json::array();
                        for (const auto& id : store_.list()) {
                            const Job job = store_.load(id);
                            nlohmann::json states = nlohmann::json::object();
                            for (const auto& p : job.pages) states[std::string(state_name(p.state))] = states.value(std::string(state_name(p.state)), 0) + 1;
                            jobs.push_back({{"job_id", id}, {"pages", job.pages.size()}, {"states", states}});
                        }
                        json(res, jobs);
                    }));

        server_.Post("/api/jobs", guarded([this](const Req& req, Res& res) {
                         const auto body = nlohmann::json::parse(req.body);
                         std::vector<std::filesystem::path> scans;
                         for (const auto& s : body.at("scans")) scans.emplace_back(s.get<std::string>());
                         JobConfig config = body.value("config", nlohmann::json::object()).get<JobConfig>();
                         std::optional<std::string> id;
                         if (body.contains("job_id")) id = body.at("job_id").get<std::string>();
                         json(res, store_.create_job(scans, config, id), 201);
                     }));

        server_.Get(R"(/api/jobs/([^/]+))", guarded([this](const Req& req, Res& res) {
                        json(res, store_.load(req.matches[1]));
                    }));

        server_.Post(R"(/api/jobs/([^/]+)/pages/(\d+)/advance)", guarded([this](const Req& req, Res& res) {
                         PageState until = PageState::Recognized;
                         if (!req.body.empty()) {
                             const auto body = nlohmann::json::parse(req.body);
                             if (body.contains("until")) until = parse_state(body.at("until").get<std::string>());
                         }
                         const std::string id = req.matches[1];
                         const int n = page_number(req.matches[2]);
                         store_.advance(id, n, until);
                         json(res, page_json(id, n));
                     }));

        server_.Get(R"(/api/jobs/([^/]+)/pages/(\d+))", guarded([this](const Req& req, Res& res) {
                        json(res, page_json(req.matches[1], page_number(req.matches[2])));
                    }));

        server_.Get(R"(/api/jobs/([^/]+)/pages/(\d+)/tiles/([^/]+)\.png)", guarded([this](const Req& req, Res& res) {
                        const std::string label = req.matches[3];
                        for (const auto& [l, path] : store_.tiles(req.matches[1], page_number(req.matches[2]))) {
                            if (l != label) continue;
                            res.set_content(job_detail::read_file(path), "image/png");
                            return;
                        }
                        throw Error(ErrorCode::NotFound, "no tile '" + label + "'");
                    }));

        server_.Put(R"(/api/jobs/([^/]+)/pages/(\d+)/entries)", guarded([this](const Req& req, Res& res) {
                        const std::string id = req.matches[1];
                        const int n = page_number(req.matches[2]);
                        const Job job = store_.load(id);
                        (void)job.page(n);
                        PageContent content;
                        const auto type = req.get_header_value("Content-Type");
                        if (type.find("xml") != std::string::npos) {
                            content = job_detail::parse_content(job.config.schema, req.body);
                        } else {
                            auto body = nlohmann::json::parse(req.body);
                            if (job.config.schema == SchemaId::TeiSubset) {
                                if (body.is_array()) body = {{"entries", body}};
                                content = body.get<TeiDocument>();
                            } else {
                                content = job_detail::parse_content(job.config.schema, body.dump());
                            }
                        }
                        store_.correct(id, n, content);
                        json(res, page_json(id, n));
                    }));

        server_.Post(R"(/api/jobs/([^/]+)/pages/(\d+)/approve)", guarded([this](const Req& req, Res& res) {
                         const std::string id = req.matches[1];
                         const int n = page_number(req.matches[2]);
                         store_.approve(id, n);
                         json(res, page_json(id, n));
                     }));

        server_.Get(R"(/api/jobs/([^/]+)/export)", guarded([this](const Req& req, Res& res) {
                        const std::string format = req.has_param("format") ? req.get_param_value("format") : "csv";
                        const auto result = store_.export_unified(req.matches[1], format);
                        res.set_header("X-Coverage", result.banner);
                        res.set_content(job_detail::read_file(result.path),
                                        format == "csv" ? "text/csv; charset=utf-8" : "application/xml");
                    }));

        server_.Get(R"(/api/jobs/([^/]+)/report)", guarded([this](const Req& req, Res& res) {
                        json(res, store_.report(req.matches[1]));
                    }));
    }

    JobStore& store_;
    httplib::Server server_;
    int port_ = -1;
};

} // namespace fraktur

#include "embedstory/serve.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "embedstory/errors.hpp"
#include "embedstory/story_bundle.hpp"

// After Eigen: httplib pulls in <resolv.h>, whose _res macro breaks Eigen headers.
#include <httplib.h>

namespace embedstory {

namespace {

constexpr const char* kAllowed = "GET, HEAD";

std::string read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read '" + path.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

std::string content_type_for(const std::filesystem::path& path) {
  static const std::map<std::string, std::string> types{
      {".html", "text/html; charset=utf-8"}, {".htm", "text/html; charset=utf-8"},
      {".js", "text/javascript; charset=utf-8"}, {".mjs", "text/javascript; charset=utf-8"},
      {".css", "text/css; charset=utf-8"},   {".json", "application/json"},
      {".svg", "image/svg+xml"},             {".png", "image/png"},
      {".jpg", "image/jpeg"},                {".jpeg", "image/jpeg"},
      {".gif", "image/gif"},                 {".ico", "image/x-icon"},
      {".ppm", "image/x-portable-pixmap"},   {".txt", "text/plain; charset=utf-8"},
      {".map", "application/json"},          {".woff2", "font/woff2"},
      {".wasm", "application/wasm"}};
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  const auto it = types.find(ext);
  return it == types.end() ? "application/octet-stream" : it->second;
}

StoryServer::StoryServer(std::string bundle_text, const std::filesystem::path& ui_dir)
    : server_(std::make_unique<httplib::Server>()) {
  const auto issues = validate_bundle_text(bundle_text);
  if (!issues.empty()) {
    std::string msg = "refusing to serve an invalid bundle (" + std::to_string(issues.size()) + " issues)";
    for (std::size_t i = 0; i < std::min<std::size_t>(issues.size(), 5); ++i) {
      msg += "\n  " + (issues[i].path.empty() ? std::string("<root>") : issues[i].path) + ": " + issues[i].message;
    }
    throw DataError(msg);
  }

  // Snapshot the UI tree so served content cannot change after startup.
  if (!ui_dir.empty()) {
    if (!std::filesystem::is_directory(ui_dir)) throw DataError("ui dir '" + ui_dir.string() + "' is not a directory");
    for (const auto& entry : std::filesystem::recursive_directory_iterator(ui_dir)) {
      if (!entry.is_regular_file()) continue;
      const auto rel = std::filesystem::relative(entry.path(), ui_dir).generic_string();
      routes_["/" + rel] = {read_all(entry.path()), content_type_for(entry.path())};
    }
    if (const auto it = routes_.find("/index.html"); it != routes_.end()) routes_["/"] = it->second;
  }
  routes_["/bundle.json"] = {std::move(bundle_text), "application/json"};
  routes_["/parity.json"] = {make_parity_fixture().dump() + "\n", "application/json"};

  // SO_REUSEADDR only: httplib's default SO_REUSEPORT would let a second server
  // share a busy port instead of failing.
  server_->set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
  });

  // httplib answers HEAD through the GET handler and drops the body.
  server_->Get(R"(/.*)", [this](const httplib::Request& req, httplib::Response& res) {
    const auto it = routes_.find(req.path);
    if (it == routes_.end()) {
      res.status = 404;
      res.set_content("not found\n", "text/plain; charset=utf-8");
      return;
    }
    res.set_content(it->second.body, it->second.content_type);
  });
  const httplib::Server::Handler not_allowed = [](const httplib::Request&, httplib::Response& res) {
    res.status = 405;
    res.set_header("Allow", kAllowed);
    res.set_content("method not allowed\n", "text/plain; charset=utf-8");
  };
  server_->Post(R"(/.*)", not_allowed);
  server_->Put(R"(/.*)", not_allowed);
  server_->Patch(R"(/.*)", not_allowed);
  server_->Delete(R"(/.*)", not_allowed);
  server_->Options(R"(/.*)", not_allowed);
}

StoryServer::~StoryServer() { stop(); }

int StoryServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = server_->bind_to_any_port(host);
    if (bound < 0) throw Error("cannot bind " + host + " to any port");
    return bound;
  }
  if (!server_->bind_to_port(host, port)) throw Error("cannot bind " + host + ":" + std::to_string(port) + " (port in use?)");
  return port;
}

void StoryServer::serve() { server_->listen_after_bind(); }

void StoryServer::stop() {
  if (server_) server_->stop();
}

void StoryServer::wait_until_ready() const { server_->wait_until_ready(); }

}  // namespace embedstory

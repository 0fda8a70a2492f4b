#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>

namespace httplib {
class Server;
}

namespace embedstory {

/// A file body and its content type.
struct StaticFile {
  std::string body;
  std::string content_type;
};

/// Content type from the file extension; application/octet-stream otherwise.
std::string content_type_for(const std::filesystem::path& path);

/// Serves an in-memory snapshot of the UI directory plus /bundle.json and
/// /parity.json. Only GET and HEAD are allowed.
class StoryServer {
 public:
  /// Throws DataError when the bundle does not validate (the message lists the
  /// first issues) or when ui_dir is given but is not a directory.
  StoryServer(std::string bundle_text, const std::filesystem::path& ui_dir = {});
  ~StoryServer();
  StoryServer(const StoryServer&) = delete;
  StoryServer& operator=(const StoryServer&) = delete;

  /// Binds without serving. Port 0 picks a free port. Returns the bound port;
  /// throws Error when the address is in use.
  int bind(const std::string& host, int port);
  /// Blocks until stop(). Call bind first.
  void serve();
  void stop();
  void wait_until_ready() const;

  const std::map<std::string, StaticFile>& routes() const { return routes_; }

 private:
  std::map<std::string, StaticFile> routes_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace embedstory

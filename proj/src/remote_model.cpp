#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include <json.hpp>

#include "cntp/models.hpp"

namespace cntp {

using nlohmann::json;

namespace {

void send_all(int fd, const std::string& data) {
    std::size_t sent = 0;
    while (sent < data.size()) {
        ssize_t n = ::send(fd, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw BackendError(std::string("send failed: ") + std::strerror(errno));
        }
        sent += static_cast<std::size_t>(n);
    }
}

// Reads one '\n'-terminated line; returns false on orderly EOF before any byte.
bool read_line(int fd, std::string& buffer, std::string& line) {
    while (true) {
        auto nl = buffer.find('\n');
        if (nl != std::string::npos) {
            line = buffer.substr(0, nl);
            buffer.erase(0, nl + 1);
            return true;
        }
        char chunk[4096];
        ssize_t n = ::recv(fd, chunk, sizeof chunk, 0);
        if (n == 0) {
            if (buffer.empty()) return false;
            throw BackendError("connection closed mid-message");
        }
        if (n < 0) {
            if (errno == EINTR) continue;
            throw BackendError(std::string("recv failed: ") + std::strerror(errno));
        }
        buffer.append(chunk, static_cast<std::size_t>(n));
    }
}

}  // namespace

// ---------------------------------------------------------------------------

RemoteModel::RemoteModel(const std::string& host, int port) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    int rc = ::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res);
    if (rc != 0) throw BackendError("cannot resolve " + host + ": " + ::gai_strerror(rc));
    for (addrinfo* ai = res; ai; ai = ai->ai_next) {
        int fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
        if (fd < 0) continue;
        if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) {
            fd_ = fd;
            break;
        }
        ::close(fd);
    }
    ::freeaddrinfo(res);
    if (fd_ < 0) throw BackendError("cannot connect to " + host + ":" + std::to_string(port));
    int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);

    try {
        json reply = json::parse(round_trip(json{{"vocabulary", true}}.dump()));
        if (reply.contains("error")) throw BackendError("server error: " + reply["error"].get<std::string>());
        vocab_ = std::make_unique<Vocabulary>(reply.at("tokens").get<std::vector<std::string>>(),
                                              token(reply.at("eos").get<std::size_t>()));
    } catch (const json::exception& e) {
        ::close(fd_);
        throw BackendError(std::string("bad vocabulary reply: ") + e.what());
    } catch (const Error& e) {
        ::close(fd_);
        throw BackendError(e.what());
    }
}

RemoteModel::~RemoteModel() {
    if (fd_ >= 0) ::close(fd_);
}

std::unique_ptr<RemoteModel> RemoteModel::connect(const std::string& address) {
    std::string host = "127.0.0.1";
    std::string port = address;
    if (auto colon = address.rfind(':'); colon != std::string::npos) {
        host = address.substr(0, colon);
        port = address.substr(colon + 1);
    }
    try {
        std::size_t pos = 0;
        int p = std::stoi(port, &pos);
        if (pos != port.size() || p <= 0 || p > 65535) throw std::invalid_argument(port);
        return std::make_unique<RemoteModel>(host, p);
    } catch (const std::logic_error&) {
        throw BackendError("bad remote address '" + address + "'");
    }
}

std::string RemoteModel::round_trip(const std::string& request) const {
    std::lock_guard lock(mutex_);
    send_all(fd_, request + "\n");
    std::string line;
    if (!read_line(fd_, buffer_, line)) throw BackendError("server closed the connection");
    return line;
}

Distribution RemoteModel::next_distribution(TokenSpan prefix) const {
    json ids = json::array();
    for (TokenId t : prefix) ids.push_back(index_of(t));
    std::string line = round_trip(json{{"prefix", ids}}.dump());
    try {
        json reply = json::parse(line);
        if (reply.contains("error")) throw BackendError("server error: " + reply["error"].get<std::string>());
        auto probs = reply.at("probs").get<std::vector<double>>();
        if (probs.size() != vocab_->size()) {
            throw BackendError("protocol error: " + std::to_string(probs.size()) + " probabilities for a vocabulary of " +
                               std::to_string(vocab_->size()));
        }
        return Distribution(std::move(probs));
    } catch (const json::exception& e) {
        throw BackendError(std::string("protocol error: ") + e.what());
    } catch (const DistributionError& e) {
        throw BackendError(std::string("protocol error: ") + e.what());
    }
}

// ---------------------------------------------------------------------------

std::string StubServer::handle_request(const ModelSource& model, const std::string& line) {
    try {
        json req = json::parse(line);
        if (req.value("vocabulary", false)) {
            return json{{"tokens", model.vocabulary().tokens()}, {"eos", index_of(model.vocabulary().eos())}}.dump();
        }
        std::vector<TokenId> prefix;
        for (const auto& id : req.at("prefix")) {
            auto t = token(id.get<std::size_t>());
            if (!model.vocabulary().contains(t)) throw Error("token id out of range");
            prefix.push_back(t);
        }
        Distribution d = model.next_distribution(prefix);
        return json{{"probs", std::vector<double>(d.probs().begin(), d.probs().end())}}.dump();
    } catch (const std::exception& e) {
        return json{{"error", e.what()}}.dump();
    }
}

StubServer::StubServer(std::shared_ptr<const ModelSource> model, int port, const std::string& bind_host)
    : model_(std::move(model)) {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw BackendError(std::string("socket: ") + std::strerror(errno));
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    if (::inet_pton(AF_INET, bind_host.c_str(), &addr.sin_addr) != 1) {
        ::close(listen_fd_);
        throw BackendError("bad bind address " + bind_host);
    }
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0 || ::listen(listen_fd_, 16) < 0) {
        std::string err = std::strerror(errno);
        ::close(listen_fd_);
        throw BackendError("cannot listen on port " + std::to_string(port) + ": " + err);
    }
    socklen_t len = sizeof addr;
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    acceptor_ = std::thread([this] { accept_loop(); });
}

StubServer::~StubServer() {
    stop();
    if (acceptor_.joinable()) acceptor_.join();
    std::vector<std::thread> clients;
    {
        std::lock_guard lock(clients_mutex_);
        clients.swap(clients_);
    }
    for (auto& t : clients) {
        if (t.joinable()) t.join();
    }
}

void StubServer::stop() {
    if (!running_.exchange(false)) return;
    std::lock_guard lock(clients_mutex_);
    for (int fd : client_fds_) ::shutdown(fd, SHUT_RDWR);
}

void StubServer::wait() {
    if (acceptor_.joinable()) acceptor_.join();
}

void StubServer::accept_loop() {
    while (running_) {
        pollfd pfd{listen_fd_, POLLIN, 0};
        int rc = ::poll(&pfd, 1, 100);
        if (rc <= 0) continue;
        int fd = ::accept(listen_fd_, nullptr, nullptr);
        if (fd < 0) continue;
        int one = 1;
        ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
        std::lock_guard lock(clients_mutex_);
        client_fds_.push_back(fd);
        clients_.emplace_back([this, fd] {
            std::string buffer, line;
            try {
                while (running_ && read_line(fd, buffer, line)) send_all(fd, handle_request(*model_, line) + "\n");
            } catch (const BackendError&) {
            }
            std::lock_guard guard(clients_mutex_);
            std::erase(client_fds_, fd);
            ::close(fd);
        });
    }
    ::close(listen_fd_);
}

}  // namespace cntp

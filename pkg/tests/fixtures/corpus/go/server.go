package web

import (
	"encoding/json"
	"net/http"
	"sync"
)

type Server struct {
	mu     sync.Mutex
	visits map[string]int
}

func NewServer() *Server {
	return &Server{visits: map[string]int{}}
}

func (s *Server) Handle(w http.ResponseWriter, r *http.Request) {
	s.mu.Lock()
	s.visits[r.URL.Path]++
	count := s.visits[r.URL.Path]
	s.mu.Unlock()
	payload := map[string]interface{}{
		"path":  r.URL.Path,
		"count": count,
	}
	if err := json.NewEncoder(w).Encode(payload); err != nil {
		http.Error(w, err.Error(), http.StatusInternalServerError)
	}
}

func (s *Server) Reset() {
	s.mu.Lock()
	defer s.mu.Unlock()
	s.visits = map[string]int{}
}

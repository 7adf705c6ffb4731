package files

import (
	"os"
	"path/filepath"
	"strings"
)

func CollectSources(root string, exts []string) ([]string, error) {
	allowed := map[string]bool{}
	for _, ext := range exts {
		allowed[strings.ToLower(ext)] = true
	}
	var out []string
	err := filepath.Walk(root, func(path string, info os.FileInfo, err error) error {
		if err != nil {
			return err
		}
		if info.IsDir() {
			if strings.HasPrefix(info.Name(), ".") && path != root {
				return filepath.SkipDir
			}
			return nil
		}
		if allowed[strings.ToLower(filepath.Ext(path))] {
			out = append(out, path)
		}
		return nil
	})
	return out, err
}

func Dedup(paths []string) []string {
	seen := map[string]bool{}
	keep := func(p string) bool {
		if seen[p] {
			return false
		}
		seen[p] = true
		return true
	}
	var out []string
	for _, p := range paths {
		if keep(p) {
			out = append(out, p)
		}
	}
	return out
}

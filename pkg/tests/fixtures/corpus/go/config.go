package files

import (
	"fmt"
	"strings"
)

// template uses literal braces and keywords: func { }
const reportTemplate = `
summary {
  total: %d
  func count: %d
}
`

type Limits struct {
	MaxFiles int
	MaxBytes int64
}

func (l Limits) Validate() error {
	if l.MaxFiles <= 0 {
		return fmt.Errorf("MaxFiles must be positive, got %d", l.MaxFiles)
	}
	if l.MaxBytes <= 0 {
		return fmt.Errorf("MaxBytes must be positive, got %d", l.MaxBytes)
	}
	return nil
}

func RenderReport(total, funcs int) string {
	body := fmt.Sprintf(reportTemplate, total, funcs)
	return strings.TrimSpace(body)
}

func DefaultLimits() Limits {
	return Limits{
		MaxFiles: 1000,
		MaxBytes: 1 << 20,
	}
}

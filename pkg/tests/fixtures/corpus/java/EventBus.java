package events;

import java.util.HashMap;
import java.util.List;
import java.util.Map;
import java.util.ArrayList;

public class EventBus {
    // braces in strings: "{topic}" must not confuse the parser
    private static final String TOPIC_PATTERN = "events/{topic}";

    private final Map<String, List<Listener>> listeners = new HashMap<>();

    public void subscribe(String topic, Listener listener) {
        listeners.computeIfAbsent(topic, key -> new ArrayList<>()).add(listener);
    }

    public int publish(String topic, String payload) {
        List<Listener> subs = listeners.get(topic);
        if (subs == null) {
            return 0;
        }
        int delivered = 0;
        for (Listener listener : subs) {
            try {
                listener.onEvent(topic, payload);
                delivered++;
            } catch (RuntimeException e) {
                System.err.println("listener failed: " + e.getMessage());
            }
        }
        return delivered;
    }

    public interface Listener {
        void onEvent(String topic, String payload);
    }

    public static class CountingListener implements Listener {
        private int count;

        @Override
        public void onEvent(String topic, String payload) {
            count++;
        }

        public int count() {
            return count;
        }
    }
}

export class BoundedQueue<T> {
    private items: T[] = [];

    constructor(private readonly capacity: number) {
        if (capacity <= 0) {
            throw new Error(`capacity must be positive, got ${capacity}`);
        }
    }

    push(item: T): boolean {
        if (this.items.length >= this.capacity) {
            return false;
        }
        this.items.push(item);
        return true;
    }

    pop(): T | undefined {
        return this.items.shift();
    }

    drain(consume: (item: T) => void): number {
        let count = 0;
        while (this.items.length > 0) {
            const item = this.items.shift();
            if (item !== undefined) {
                consume(item);
                count++;
            }
        }
        return count;
    }

    get size(): number {
        return this.items.length;
    }
}

export function partition<T>(items: T[], predicate: (item: T) => boolean): [T[], T[]] {
    const yes: T[] = [];
    const no: T[] = [];
    for (const item of items) {
        if (predicate(item)) {
            yes.push(item);
        } else {
            no.push(item);
        }
    }
    return [yes, no];
}
